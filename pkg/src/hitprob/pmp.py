"""Adjoint system, maximum condition and a conditional-gradient optimizer.

For a regular control the costate on the noise interval [t_{k-1}, t_k) is
theta_k, the backward solution of d theta/dt = -A(t)^T theta with
theta_k(1) = grad h_k(z_k).  An optimal control maximises
<theta(t), B(t) v> over v in V for almost every t.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from .controls import Control, ControlSet
from .errors import NotABasisError, NotRegularError, NumericalError, ScoreUndefinedError, ValidationError
from .goalset import GoalSet, contains
from .gradient import gradient_hk
from .linsys import FundamentalSolution, LinearSystem, MatrixFunction, TimeGrid, compute_z_vectors
from .montecarlo import McConfig

if TYPE_CHECKING:
    from .problem import ProblemInstance

log = logging.getLogger(__name__)

TRIVIAL_Z = 1e-12


@dataclass(frozen=True)
class AdjointTrajectory:
    """Backward solutions theta_k on every grid node, shape (N, K+1, n)."""

    grid: TimeGrid
    theta_k: np.ndarray
    terminal_grads: np.ndarray
    A: MatrixFunction = field(repr=False)

    @property
    def assembled(self) -> np.ndarray:
        """theta(t_s) = theta_k(t_s) for t_s in [t_{k-1}, t_k); theta_N at t = 1."""
        nodes = np.arange(len(self.grid.nodes))
        owner = np.searchsorted(np.asarray(self.grid.switch_indices), nodes, side="right") - 1
        owner = np.minimum(owner, self.theta_k.shape[0] - 1)
        return self.theta_k[owner, nodes]

    def interval_of(self, t: float) -> int:
        sw = self.grid.switch_times
        return int(min(np.searchsorted(sw, t, side="right") - 1, len(sw) - 2))

    def at(self, t: float, k: int | None = None) -> np.ndarray:
        """theta_k(t); ``k`` defaults to the noise interval containing ``t``.

        Off-node times take one backward RK4 step from the next node.
        """
        if k is None:
            k = self.interval_of(t)
        idx = self.grid.locate(t)
        if idx is not None:
            return self.theta_k[k, idx]
        s = int(np.searchsorted(self.grid.nodes, t))
        h = self.grid.nodes[s] - t
        A1, Am, A0 = self.A.at(np.array([self.grid.nodes[s], t + 0.5 * h, t]))
        return _rk4_back_step(self.theta_k[k, s], A1, Am, A0, h)


def _rk4_back_step(theta, A_right, A_mid, A_left, h):
    """One RK4 step of d theta/dt = -A^T theta from t+h back to t."""
    f = lambda A, th: A.T @ th  # noqa: E731  (d theta / d(-t))
    k1 = f(A_right, theta)
    k2 = f(A_mid, theta + 0.5 * h * k1)
    k3 = f(A_mid, theta + 0.5 * h * k2)
    k4 = f(A_left, theta + h * k3)
    return theta + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def adjoint_solve(system: LinearSystem, fund: FundamentalSolution, terminal_grads) -> AdjointTrajectory:
    """Integrate each theta_k backward from t = 1 over the whole grid."""
    grid = fund.grid
    tg = np.atleast_2d(np.asarray(terminal_grads, dtype=float))
    if tg.shape != (grid.n_intervals, system.n):
        raise ValidationError(f"terminal gradients must have shape {(grid.n_intervals, system.n)}, got {tg.shape}")
    A_stages = system.A.at(grid.stage_times())
    h = grid.steps
    K = grid.n_steps
    theta = np.empty((tg.shape[0], K + 1, system.n))
    cur = tg.T.copy()  # all N solutions at once, columns
    theta[:, K] = tg
    for s in range(K - 1, -1, -1):
        A0, Am, A1 = A_stages[s]
        cur = _rk4_back_step(cur, A1, Am, A0, h[s])
        theta[:, s] = cur.T
    return AdjointTrajectory(grid=grid, theta_k=theta, terminal_grads=tg, A=system.A)


def hamiltonian_argmax(theta, Bt, vset: ControlSet) -> np.ndarray:
    """argmax over v in V of <theta, B v> = <B^T theta, v>.

    Ties: box coordinates with zero switching value take the midpoint, the
    ball returns 0 when B^T theta = 0, the finite set returns the lowest index.
    """
    s = np.asarray(Bt, dtype=float).T @ np.asarray(theta, dtype=float)
    if vset.kind == "box":
        return np.where(s > 0, vset.hi, np.where(s < 0, vset.lo, 0.5 * (vset.lo + vset.hi)))
    if vset.kind == "ball":
        norm = np.linalg.norm(s)
        return np.zeros_like(s) if norm == 0 else vset.radius * s / norm
    scores = vset.points @ s
    return vset.points[int(np.argmax(scores))].copy()


class Degeneracy(str, Enum):
    TRIVIAL_OPTIMAL = "trivial_optimal"
    TRIVIAL_SUBOPTIMAL = "trivial_suboptimal_certificate"
    NONTRIVIAL = "nontrivial"


def check_degeneracy(z, xhat0, q: GoalSet) -> Degeneracy:
    """Classify a control by its z-vectors.

    All z_i zero: phi = 1 if xhat0 is in Q (a global optimum), else phi = 0
    (cannot be optimal unless the problem is degenerate).
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if np.max(np.linalg.norm(z, axis=1)) > TRIVIAL_Z:
        return Degeneracy.NONTRIVIAL
    return Degeneracy.TRIVIAL_OPTIMAL if contains(q, xhat0) else Degeneracy.TRIVIAL_SUBOPTIMAL


@dataclass(frozen=True)
class PmpReport:
    residual: float
    gaps: np.ndarray
    argmax_control: Control
    gradients: tuple
    adjoint: AdjointTrajectory = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "residual": self.residual,
            "gaps": self.gaps.tolist(),
            "argmax_control": self.argmax_control.to_dict(),
            "terminal_grads": [g.value.tolist() for g in self.gradients],
            "terminal_grad_std_errors": [g.std_error.tolist() for g in self.gradients],
        }


def terminal_gradients(problem: "ProblemInstance", z: np.ndarray, mc: McConfig) -> tuple:
    """grad h_k at every z_k; any failure means the problem is not regular here."""
    out = []
    for k in range(len(z)):
        try:
            out.append(gradient_hk(k, z, problem.fund.xhat0, problem.noise, problem.goal, mc))
        except (NotABasisError, ScoreUndefinedError, NumericalError) as exc:
            raise NotRegularError(f"not regular: gradient of h_{k} failed ({exc})", failed_k=k) from exc
    return tuple(out)


def pmp_residual(problem: "ProblemInstance", control: Control, mc: McConfig) -> PmpReport:
    """Midpoint-rule integral of max_v <theta, B v> - <theta, B u>."""
    z = compute_z_vectors(problem.fund, problem.system, control)
    grads = terminal_gradients(problem, z, mc)
    adj = adjoint_solve(problem.system, problem.fund, np.stack([g.value for g in grads]))

    mids = control.midpoints()
    widths = np.diff(control.breaks)
    gaps = np.empty(len(mids))
    best = np.empty_like(control.values)
    for i, t in enumerate(mids):
        theta = adj.at(t)
        Bt = problem.system.B.at(t)
        v = hamiltonian_argmax(theta, Bt, control.constraint)
        best[i] = v
        gaps[i] = theta @ Bt @ v - theta @ Bt @ control.values[i]
    gaps[(gaps < 0.0) & (gaps >= -1e-12)] = 0.0
    return PmpReport(
        residual=float(np.sum(widths * gaps)),
        gaps=gaps,
        argmax_control=control.with_values(best),
        gradients=grads,
        adjoint=adj,
    )


@dataclass(frozen=True)
class McSchedule:
    """Sample counts for the gradient estimates: start * growth**iter, capped."""

    start: int = 20_000
    growth: float = 1.5
    cap: int = 400_000

    def samples(self, it: int) -> int:
        return int(min(self.cap, round(self.start * self.growth**it)))


@dataclass
class OptimizeResult:
    control: Control
    phi_trace: list
    residual_trace: list
    accepted_steps: int
    status: str
    message: str = ""

    @property
    def phi(self) -> float:
        return self.phi_trace[-1]

    def to_dict(self) -> dict:
        return {
            "control": self.control.to_dict(),
            "phi_trace": list(self.phi_trace),
            "residual_trace": list(self.residual_trace),
            "accepted_steps": self.accepted_steps,
            "status": self.status,
            "message": self.message,
        }


STEP_SIZES = tuple(2.0**-i for i in range(9))


def probe_directions(n: int) -> np.ndarray:
    """Deterministic terminal-costate guesses: +-e_i and the 2^n sign diagonals."""
    eye = np.eye(n)
    dirs = [eye, -eye]
    if n <= 4:
        signs = np.array(np.meshgrid(*([[-1.0, 1.0]] * n), indexing="ij")).reshape(n, -1).T
        dirs.append(signs / np.sqrt(n))
    return np.vstack(dirs)


def _escape(problem, control: Control, mc: McConfig, phi0: float):
    """Leave a control where phi = 0 (trivial z with xhat0 outside Q, or a plateau).

    No useful gradient exists there; instead try the
    Hamiltonian maximisers for a fixed set of terminal costates shared by
    all k, and keep the best one that improves phi.
    """
    best, best_phi = None, phi0
    for p in probe_directions(problem.system.n):
        adj = adjoint_solve(problem.system, problem.fund, np.tile(p, (problem.N, 1)))
        vals = np.array([
            hamiltonian_argmax(adj.at(t), problem.system.B.at(t), control.constraint)
            for t in control.midpoints()
        ])
        cand = control.with_values(vals)
        est = problem.phi(cand, mc).value
        if est > best_phi:
            best, best_phi = cand, est
    return best, best_phi


def optimize(
    problem: "ProblemInstance",
    init: Control,
    iters: int,
    mc: McConfig,
    schedule: McSchedule | None = None,
    tol: float = 1e-9,
) -> OptimizeResult:
    """Conditional-gradient ascent with the Hamiltonian argmax as the linear oracle.

    Candidate steps u + alpha (v* - u), alpha = 1, 1/2, .., 1/256, are
    compared on the fixed common-random-number estimate ``mc``; the largest
    improving alpha is accepted, so the phi trace never decreases.  The
    gradient sample counts follow ``schedule``.
    """
    if iters < 1:
        raise ValidationError("iters must be >= 1")
    schedule = schedule or McSchedule()
    u = init
    phi = problem.phi(u, mc).value
    phi_trace, res_trace = [phi], []
    accepted = 0

    verdict = check_degeneracy(problem.z_vectors(u), problem.fund.xhat0, problem.goal)
    if verdict is Degeneracy.TRIVIAL_OPTIMAL:
        return OptimizeResult(u, phi_trace, res_trace, 0, "trivial_optimal", "trivial z-vectors with xhat0 in Q")
    # With no sample inside Q every gradient estimate is exactly zero, so a
    # zero residual says nothing; probe costates instead.
    if verdict is Degeneracy.TRIVIAL_SUBOPTIMAL or phi == 0.0:
        cand, cand_phi = _escape(problem, u, mc, phi)
        if cand is None:
            return OptimizeResult(u, phi_trace, res_trace, 0, "stalled", "phi is 0 and no probe control improves it")
        u, phi = cand, cand_phi
        phi_trace.append(phi)
        accepted += 1

    status, message = "max_iters", ""
    for it in range(iters):
        gmc = McConfig(schedule.samples(it), mc.seed, threads=mc.threads)
        try:
            report = pmp_residual(problem, u, gmc)
        except NotRegularError as exc:
            status, message = "not_regular", str(exc)
            break
        res_trace.append(report.residual)
        log.info("iter %d phi=%.6f residual=%.3e", it, phi, report.residual)
        if report.residual <= tol:
            status = "stationary"
            break
        v = report.argmax_control.values
        for alpha in STEP_SIZES:
            cand = u.with_values(u.values + alpha * (v - u.values))
            est = problem.phi(cand, mc).value
            if est > phi:
                u, phi = cand, est
                accepted += 1
                break
        else:
            status = "no_improving_step"
            break
        phi_trace.append(phi)
    return OptimizeResult(u, phi_trace, res_trace, accepted, status, message)
