"""Linear time-varying system, fundamental matrix and the Cauchy-formula reduction.

The terminal state of

    dx/dt = A(t) x + xi(t) B(t) u(t) + f(t),   x(0) = x0,

with xi(t) = xi_i on [t_{i-1}, t_i), is

    x(1) = xhat0 + sum_i xi_i z_i,

where ``z_i = Phi(1) int_{t_{i-1}}^{t_i} Phi^{-1}(s) B(s) u(s) ds``.  Everything
here works on one :class:`TimeGrid`: RK4 steps between consecutive nodes and
composite Simpson sums over each uniform segment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from .errors import FactorizationError, ValidationError

if TYPE_CHECKING:
    from .controls import Control

BREAK_TOL = 1e-12
DEFAULT_STEPS = 64


@dataclass(frozen=True)
class TimeGrid:
    """Nodes in [0, 1] made of uniform segments between breakpoints.

    ``break_indices`` are node positions of the segment boundaries; every
    segment holds the same even number of RK4 steps so that Simpson's rule
    applies segment by segment.  ``switch_indices`` locate t_0..t_N.
    """

    nodes: np.ndarray
    break_indices: tuple[int, ...]
    switch_indices: tuple[int, ...]

    @classmethod
    def build(
        cls,
        switch_times: Sequence[float],
        extra_breaks: Sequence[float] = (),
        steps_per_interval: int = DEFAULT_STEPS,
    ) -> "TimeGrid":
        if steps_per_interval < 2 or steps_per_interval % 2:
            raise ValidationError("steps_per_interval must be an even integer >= 2")
        switch = np.asarray(switch_times, dtype=float)
        _check_switch_times(switch)
        breaks = [float(t) for t in switch]
        for t in extra_breaks:
            t = float(t)
            if not 0.0 <= t <= 1.0:
                raise ValidationError(f"breakpoint {t!r} outside [0, 1]")
            if all(abs(t - b) > BREAK_TOL for b in breaks):
                breaks.append(t)
        breaks.sort()

        pieces = []
        for lo, hi in zip(breaks[:-1], breaks[1:]):
            frac = np.arange(steps_per_interval) / steps_per_interval
            pieces.append(lo + (hi - lo) * frac)
        pieces.append(np.array([1.0]))
        nodes = np.concatenate(pieces)
        break_idx = tuple(i * steps_per_interval for i in range(len(breaks)))
        switch_idx = tuple(break_idx[breaks.index(float(t))] for t in switch)
        return cls(nodes=nodes, break_indices=break_idx, switch_indices=switch_idx)

    @property
    def n_steps(self) -> int:
        return len(self.nodes) - 1

    @property
    def breaks(self) -> np.ndarray:
        return self.nodes[list(self.break_indices)]

    @property
    def switch_times(self) -> np.ndarray:
        return self.nodes[list(self.switch_indices)]

    @property
    def n_intervals(self) -> int:
        """Number of noise intervals N."""
        return len(self.switch_indices) - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def segments(self) -> list[tuple[int, int]]:
        b = self.break_indices
        return list(zip(b[:-1], b[1:]))

    def step_interval(self) -> np.ndarray:
        """Noise-interval index (0-based) of every RK4 step."""
        sw = np.asarray(self.switch_indices)
        return np.searchsorted(sw, np.arange(self.n_steps), side="right") - 1

    def stage_times(self) -> np.ndarray:
        """RK4 stage times (left, middle, right) per step, shape (K, 3)."""
        left, right = self.nodes[:-1], self.nodes[1:]
        return np.stack([left, 0.5 * (left + right), right], axis=1)

    def locate(self, t: float) -> int | None:
        """Node index equal to ``t`` within BREAK_TOL, else None."""
        i = int(np.searchsorted(self.nodes, t))
        for cand in (i - 1, i):
            if 0 <= cand < len(self.nodes) and abs(self.nodes[cand] - t) <= BREAK_TOL:
                return cand
        return None


def _check_switch_times(switch: np.ndarray) -> None:
    if switch.ndim != 1 or len(switch) < 2:
        raise ValidationError("need at least two switch times (0 and 1)")
    if switch[0] != 0.0 or switch[-1] != 1.0:
        raise ValidationError("switch times must start at 0 and end at 1")
    if np.any(np.diff(switch) <= 0):
        raise ValidationError("switch times must be strictly increasing")


@dataclass(frozen=True)
class MatrixFunction:
    """Constant matrix, or samples at ``times`` interpolated linearly."""

    values: np.ndarray
    times: np.ndarray | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if self.times is None:
            if vals.ndim == 1:
                vals = vals[:, None]
            if vals.ndim != 2:
                raise ValidationError("constant matrix must be 2-D")
        else:
            times = np.asarray(self.times, dtype=float)
            if vals.ndim == 2:
                vals = vals[:, :, None]
            if vals.ndim != 3 or len(times) != len(vals):
                raise ValidationError("need one matrix sample per time")
            if len(times) < 2 or times[0] != 0.0 or times[-1] != 1.0:
                raise ValidationError("sample times must cover [0, 1] from 0 to 1")
            if np.any(np.diff(times) <= 0):
                raise ValidationError("sample times must be strictly increasing")
            object.__setattr__(self, "times", times)
        if not np.all(np.isfinite(vals)):
            raise ValidationError("matrix entries must be finite")
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, m) -> "MatrixFunction":
        return cls(np.asarray(m, dtype=float))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[-2:]

    @property
    def is_constant(self) -> bool:
        return self.times is None

    def at(self, t) -> np.ndarray:
        """Evaluate at scalar or array ``t``; result shape ``t.shape + shape``."""
        t = np.asarray(t, dtype=float)
        if self.times is None:
            return np.broadcast_to(self.values, t.shape + self.shape).copy()
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        t0, t1 = self.times[idx], self.times[idx + 1]
        w = ((t - t0) / (t1 - t0))[..., None, None]
        return self.values[idx] * (1.0 - w) + self.values[idx + 1] * w

    def breakpoints(self) -> np.ndarray:
        return np.empty(0) if self.times is None else self.times


@dataclass(frozen=True)
class LinearSystem:
    A: MatrixFunction
    B: MatrixFunction
    f: MatrixFunction
    x0: np.ndarray
    switch_times: np.ndarray

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValidationError(f"A must be square, got {self.A.shape}", "system.A")
        if self.B.shape[0] != n:
            raise ValidationError(f"B must have {n} rows, got {self.B.shape}", "system.B")
        if self.f.shape != (n, 1):
            raise ValidationError(f"f must be {n}x1, got {self.f.shape}", "system.f")
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.shape != (n,):
            raise ValidationError(f"x0 must have length {n}", "system.x0")
        switch = np.asarray(self.switch_times, dtype=float)
        try:
            _check_switch_times(switch)
        except ValidationError as exc:
            raise ValidationError(str(exc), "switch_times") from None
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "switch_times", switch)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def N(self) -> int:
        return len(self.switch_times) - 1

    def matrix_breakpoints(self) -> np.ndarray:
        pts = np.concatenate([self.A.breakpoints(), self.B.breakpoints(), self.f.breakpoints()])
        return np.unique(pts)


@dataclass(frozen=True)
class FundamentalSolution:
    """Phi at every grid node plus derived transfer matrices.

    ``transfer[s] = Phi(1) Phi^{-1}(t_s)`` at every node; ``psi`` holds the
    N matrices Psi_i at the switch times t_1..t_N.
    """

    grid: TimeGrid
    phi: np.ndarray
    transfer: np.ndarray
    psi: np.ndarray
    xhat0: np.ndarray

    @property
    def phi_at_1(self) -> np.ndarray:
        return self.phi[-1]

    @property
    def n(self) -> int:
        return self.phi.shape[1]


def _rk4_march(
    A_stages: np.ndarray,
    h: np.ndarray,
    y0: np.ndarray,
    forcing: Callable[[int], tuple] | None = None,
    keep: bool = True,
):
    """Classical RK4 for y' = A(t) y + g(t) over all grid steps.

    ``A_stages`` has shape (K, 3, n, n) for the left/middle/right stage
    times; ``y`` has shape (n, c).  ``forcing(s)`` returns the forcing at the
    three stage times of step ``s`` (each broadcastable to ``y``).
    """
    y = np.array(y0, dtype=float)
    out = [y.copy()] if keep else None
    for s in range(len(h)):
        A0, Am, A1 = A_stages[s]
        hs = h[s]
        if forcing is None:
            k1 = A0 @ y
            k2 = Am @ (y + 0.5 * hs * k1)
            k3 = Am @ (y + 0.5 * hs * k2)
            k4 = A1 @ (y + hs * k3)
        else:
            g0, gm, g1 = forcing(s)
            k1 = A0 @ y + g0
            k2 = Am @ (y + 0.5 * hs * k1) + gm
            k3 = Am @ (y + 0.5 * hs * k2) + gm
            k4 = A1 @ (y + hs * k3) + g1
        y = y + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if keep:
            out.append(y.copy())
    return np.stack(out) if keep else y


def segment_simpson(values: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Composite Simpson integral of node ``values`` over each grid segment.

    ``values`` has leading axis over nodes; returns shape (n_segments, ...).
    """
    out = []
    for a, b in grid.segments():
        k = b - a
        h = (grid.nodes[b] - grid.nodes[a]) / k
        w = np.ones(k + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        out.append(np.tensordot(w, values[a : b + 1], axes=(0, 0)) * (h / 3.0))
    return np.stack(out)


def _check_grid(system: LinearSystem, grid: TimeGrid) -> None:
    st = grid.switch_times
    if len(st) != len(system.switch_times) or np.any(st != system.switch_times):
        raise ValidationError("grid is missing a switch time of the system")


def solve_fundamental(system: LinearSystem, grid: TimeGrid) -> FundamentalSolution:
    """Integrate dPhi/dt = A Phi, Phi(0) = I, and assemble Psi_i and xhat0."""
    _check_grid(system, grid)
    n = system.n
    A_stages = system.A.at(grid.stage_times())
    phi = _rk4_march(A_stages, grid.steps, np.eye(n))
    phi[0] = np.eye(n)
    if not np.all(np.isfinite(phi)):
        raise FactorizationError("fundamental matrix blew up during integration")
    transfer = transfer_matrices(phi, phi[-1])
    psi = transfer[list(grid.switch_indices[1:])]
    psi[-1] = np.eye(n)

    fvals = system.f.at(grid.nodes)[:, :, 0]
    drift = np.einsum("sij,sj->si", transfer, fvals)
    xhat0 = phi[-1] @ system.x0 + segment_simpson(drift, grid).sum(axis=0)
    return FundamentalSolution(grid=grid, phi=phi, transfer=transfer, psi=psi, xhat0=xhat0)


def transfer_matrices(phi: np.ndarray, phi_end: np.ndarray) -> np.ndarray:
    """X_s = phi_end Phi_s^{-1} via LU solves of Phi_s^T X_s^T = phi_end^T."""
    rhs = np.broadcast_to(phi_end.T, phi.shape)
    try:
        xt = np.linalg.solve(np.swapaxes(phi, -1, -2), rhs)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"singular fundamental matrix: {exc}") from None
    if not np.all(np.isfinite(xt)):
        raise FactorizationError("non-finite transfer matrix")
    return np.swapaxes(xt, -1, -2)


def segment_gains(fund: FundamentalSolution, system: LinearSystem) -> np.ndarray:
    """Per-segment integrals of Phi(1) Phi^{-1}(s) B(s), shape (n_seg, n, m)."""
    B = system.B.at(fund.grid.nodes)
    return segment_simpson(fund.transfer @ B, fund.grid)


def compute_z_vectors(
    fund: FundamentalSolution, system: LinearSystem, control: "Control"
) -> np.ndarray:
    """z-vectors z_1..z_N as an (N, n) array.

    The control is constant on each grid segment, so every z_i is a sum of
    segment gains applied to the segment values.
    """
    grid = fund.grid
    u = control.segment_values(grid)
    if u.shape[1] != system.m:
        raise ValidationError(f"control dimension {u.shape[1]} != m = {system.m}")
    contrib = np.einsum("kij,kj->ki", segment_gains(fund, system), u)
    seg_start = np.asarray(grid.break_indices[:-1])
    owner = np.searchsorted(np.asarray(grid.switch_indices), seg_start, side="right") - 1
    z = np.zeros((grid.n_intervals, system.n))
    np.add.at(z, owner, contrib)
    return z


def _step_controls(control: "Control", grid: TimeGrid) -> np.ndarray:
    seg = control.segment_values(grid)
    per_seg = np.diff(np.asarray(grid.break_indices))
    return np.repeat(seg, per_seg, axis=0)


def propagate_y(system: LinearSystem, control: "Control", grid: TimeGrid) -> np.ndarray:
    """Solve dy/dt = A y + B u, y(0) = 0; return y(t_1..t_N), shape (N, n)."""
    _check_grid(system, grid)
    u = _step_controls(control, grid)
    if u.shape[1] != system.m:
        raise ValidationError(f"control dimension {u.shape[1]} != m = {system.m}")
    stages = grid.stage_times()
    A_stages = system.A.at(stages)
    Bu = np.einsum("ktij,kj->kti", system.B.at(stages), u)[..., None]

    traj = _rk4_march(A_stages, grid.steps, np.zeros((system.n, 1)), lambda s: Bu[s])
    return traj[list(grid.switch_indices[1:]), :, 0]


def terminal_state(fund: FundamentalSolution, z: np.ndarray, xi) -> np.ndarray:
    """xhat0 + sum_i xi_i z_i for one realisation (N,) or a batch (S, N)."""
    z = np.asarray(z, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != len(z):
        raise ValidationError(f"xi has length {xi.shape[-1]}, expected {len(z)}")
    return fund.xhat0 + xi @ z


def simulate_terminal(
    system: LinearSystem, control: "Control", grid: TimeGrid, xi
) -> np.ndarray:
    """Direct RK4 integration of the noisy system with xi frozen per sample.

    Independent of the z-vector route; returns x(1) for each row of ``xi``.
    """
    _check_grid(system, grid)
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if xi.shape[1] != system.N:
        raise ValidationError(f"xi has length {xi.shape[1]}, expected {system.N}")
    u = _step_controls(control, grid)
    stages = grid.stage_times()
    A_stages = system.A.at(stages)
    Bu = np.einsum("ktij,kj->kti", system.B.at(stages), u)
    fv = system.f.at(stages)[..., 0]
    noise_of_step = grid.step_interval()

    def forcing(s):
        w = xi[:, noise_of_step[s]]
        return tuple(np.outer(Bu[s, q], w) + fv[s, q][:, None] for q in range(3))

    x0 = np.repeat(system.x0[:, None], len(xi), axis=1)
    return _rk4_march(A_stages, grid.steps, x0, forcing, keep=False).T
