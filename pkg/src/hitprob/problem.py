"""Problem configuration, validation and the compiled problem instance.

A config is a JSON document (``spec_version: 1``); see README for the
schema.  :func:`compile_problem` validates it, builds the time grid
(switch times, control grid and matrix sample times, each segment refined
into RK4 steps) and precomputes the fundamental solution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .controls import Control, ControlSet
from .errors import ValidationError
from .functional import ProbEstimate, _estimate, evaluate_g_mc
from .goalset import AnnulusSector, Ball, Box, DiscInHyperplane, GoalSet, Halfspace, Lens
from .linsys import (
    DEFAULT_STEPS,
    FundamentalSolution,
    LinearSystem,
    MatrixFunction,
    TimeGrid,
    compute_z_vectors,
    propagate_y,
    simulate_terminal,
    solve_fundamental,
)
from .montecarlo import McConfig
from .noise import GaussianNoise, Normal1D, NoiseModel, ProductNoise, Uniform1D

SPEC_VERSION = 1


def _get(cfg: dict, key: str, path: str, default: Any = ...):
    if not isinstance(cfg, dict):
        raise ValidationError("expected an object", path)
    if key not in cfg:
        if default is ...:
            raise ValidationError("missing required field", f"{path}.{key}" if path else key)
        return default
    return cfg[key]


def _array(value, path: str, ndim: int | None = None) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError("expected a numeric array", path) from None
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(f"expected {ndim}-D array, got {arr.ndim}-D", path)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("entries must be finite", path)
    return arr


def _wrap(path: str, fn, *args):
    """Re-raise validation errors from constructors with a field path."""
    try:
        return fn(*args)
    except ValidationError as exc:
        if exc.path:
            raise
        raise ValidationError(str(exc), path) from None


def parse_matrix(value, path: str, vector: bool = False) -> MatrixFunction:
    if isinstance(value, dict):
        times = _array(_get(value, "times", path), f"{path}.times", 1)
        vals = _array(_get(value, "values", path), f"{path}.values")
        if vector and vals.ndim == 2:
            vals = vals[:, :, None]
        return _wrap(path, MatrixFunction, vals, times)
    arr = _array(value, path)
    if vector:
        arr = arr.reshape(-1, 1) if arr.ndim == 1 else arr
    elif arr.ndim == 1:
        arr = arr[:, None]
    return _wrap(path, MatrixFunction, arr)


def parse_noise(cfg: dict, path: str = "noise") -> NoiseModel:
    kind = _get(cfg, "kind", path)
    if kind == "gaussian":
        mean = _array(_get(cfg, "mean", path), f"{path}.mean", 1)
        cov = _array(_get(cfg, "cov", path), f"{path}.cov", 2)
        return _wrap(path, GaussianNoise, mean, cov)
    if kind == "product":
        comps = _get(cfg, "components", path)
        if not isinstance(comps, list) or not comps:
            raise ValidationError("expected a non-empty list", f"{path}.components")
        out = []
        for i, c in enumerate(comps):
            cp = f"{path}.components[{i}]"
            ck = _get(c, "kind", cp)
            if ck == "gaussian":
                out.append(_wrap(cp, Normal1D, float(_get(c, "mu", cp)), float(_get(c, "sigma", cp))))
            elif ck == "uniform":
                out.append(_wrap(cp, Uniform1D, float(_get(c, "a", cp)), float(_get(c, "b", cp))))
            else:
                raise ValidationError(f"unknown component kind {ck!r}", f"{cp}.kind")
        return ProductNoise(tuple(out))
    raise ValidationError(f"unknown noise kind {kind!r}", f"{path}.kind")


def parse_goal(cfg: dict, path: str = "goal") -> GoalSet:
    kind = _get(cfg, "kind", path)
    vec = lambda key: _array(_get(cfg, key, path), f"{path}.{key}", 1)  # noqa: E731
    num = lambda key: float(_get(cfg, key, path))  # noqa: E731
    builders = {
        "halfspace": lambda: Halfspace(vec("a"), num("b")),
        "ball": lambda: Ball(vec("center"), num("radius")),
        "box": lambda: Box(vec("lo"), vec("hi")),
        "disc_in_hyperplane": lambda: DiscInHyperplane(
            int(_get(cfg, "fixed_coord", path)), num("fixed_value"), vec("center"), num("radius")
        ),
        "annulus_sector": lambda: AnnulusSector(num("r_lo"), num("r_hi")),
        "lens": lambda: Lens(vec("c1"), vec("c2"), num("radius")),
    }
    if kind not in builders:
        raise ValidationError(f"unknown goal kind {kind!r}", f"{path}.kind")
    return _wrap(path, builders[kind])


def parse_control_set(cfg: dict, m: int, path: str = "control_set") -> ControlSet:
    kind = _get(cfg, "kind", path)
    if kind == "box":
        vs = _wrap(path, ControlSet.box, _array(_get(cfg, "lo", path), f"{path}.lo"), _array(_get(cfg, "hi", path), f"{path}.hi"))
    elif kind == "ball":
        vs = _wrap(path, ControlSet.ball, float(_get(cfg, "radius", path)), m)
    elif kind == "finite":
        vs = _wrap(path, ControlSet.finite, _array(_get(cfg, "points", path), f"{path}.points"))
    else:
        raise ValidationError(f"unknown control set kind {kind!r}", f"{path}.kind")
    if vs.dim != m:
        raise ValidationError(f"control set has dimension {vs.dim}, B has m = {m} columns", path)
    return vs


def _control_grid(cfg, switch: np.ndarray, path: str = "control_grid") -> np.ndarray:
    if cfg is None:
        return switch.copy()
    if isinstance(cfg, dict):
        per = int(_get(cfg, "per_interval", path))
        if per < 1:
            raise ValidationError("per_interval must be >= 1", f"{path}.per_interval")
        pts = [switch[0]]
        for lo, hi in zip(switch[:-1], switch[1:]):
            inner = lo + (hi - lo) * np.arange(1, per) / per
            pts.extend(inner.tolist())
            pts.append(hi)
        return np.asarray(pts)
    grid = _array(cfg, path, 1)
    if len(grid) < 2 or grid[0] != 0.0 or grid[-1] != 1.0 or np.any(np.diff(grid) <= 0):
        raise ValidationError("control grid must increase strictly from 0 to 1", path)
    for t in switch:
        if np.min(np.abs(grid - t)) > 1e-12:
            raise ValidationError(f"control grid does not contain switch time {t!r}", path)
    # snap near-coincident points onto the switch times
    for t in switch:
        grid[np.argmin(np.abs(grid - t))] = t
    return grid


@dataclass(frozen=True)
class ProblemInstance:
    system: LinearSystem
    noise: NoiseModel
    goal: GoalSet
    vset: ControlSet
    grid: TimeGrid
    fund: FundamentalSolution
    control_grid: np.ndarray
    run: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.system.N

    def zero_control(self) -> Control:
        return self.constant_control(np.zeros(self.system.m))

    def constant_control(self, value) -> Control:
        return Control.constant(self.control_grid, value, self.vset)

    def control(self, values) -> Control:
        return Control(self.control_grid, values, self.vset)

    def z_vectors(self, control: Control) -> np.ndarray:
        return compute_z_vectors(self.fund, self.system, control)

    def y_values(self, control: Control) -> np.ndarray:
        return propagate_y(self.system, control, self.grid)

    def phi(self, control: Control, mc: McConfig) -> ProbEstimate:
        return phi(self, control, mc)

    def to_dict(self) -> dict:
        sysd = self.system
        return {
            "spec_version": SPEC_VERSION,
            "n": sysd.n,
            "m": sysd.m,
            "N": self.N,
            "switch_times": sysd.switch_times.tolist(),
            "control_grid": self.control_grid.tolist(),
            "grid": {
                "nodes": self.grid.nodes.tolist(),
                "break_indices": list(self.grid.break_indices),
                "switch_indices": list(self.grid.switch_indices),
            },
            "noise": self.noise.to_dict(),
            "goal": self.goal.to_dict(),
            "control_set": self.vset.to_dict(),
            "phi_at_1": self.fund.phi_at_1.tolist(),
            "psi": self.fund.psi.tolist(),
            "xhat0": self.fund.xhat0.tolist(),
        }

    def serialize(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True).encode()


def compile_problem(cfg: dict) -> ProblemInstance:
    """Validate a config mapping and build the instance (no partial results)."""
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object")
    version = _get(cfg, "spec_version", "")
    if version != SPEC_VERSION:
        raise ValidationError(f"unsupported spec_version {version!r}", "spec_version")

    scfg = _get(cfg, "system", "")
    A = parse_matrix(_get(scfg, "A", "system"), "system.A")
    B = parse_matrix(_get(scfg, "B", "system"), "system.B")
    n, m = A.shape[0], B.shape[1]
    f = parse_matrix(_get(scfg, "f", "system", [0.0] * n), "system.f", vector=True)
    x0 = _array(_get(scfg, "x0", "system"), "system.x0", 1)
    switch = _array(_get(cfg, "switch_times", ""), "switch_times", 1)
    system = LinearSystem(A, B, f, x0, switch)

    noise = parse_noise(_get(cfg, "noise", ""))
    if noise.dim != system.N:
        raise ValidationError(
            f"noise dimension N = {noise.dim} but switch_times define {system.N} intervals", "noise"
        )
    goal = parse_goal(_get(cfg, "goal", ""))
    if goal.dim != n:
        raise ValidationError(f"goal set lives in R^{goal.dim}, state dimension is n = {n}", "goal")
    vset = parse_control_set(_get(cfg, "control_set", ""), m)

    cgrid = _control_grid(cfg.get("control_grid"), system.switch_times)
    integ = cfg.get("integrator", {}) or {}
    steps = int(_get(integ, "steps_per_interval", "integrator", DEFAULT_STEPS))
    breaks = np.concatenate([cgrid, system.matrix_breakpoints()])
    # control-interval midpoints become nodes whenever another breakpoint splits the interval
    for lo, hi in zip(cgrid[:-1], cgrid[1:]):
        if np.any((breaks > lo + 1e-12) & (breaks < hi - 1e-12)):
            breaks = np.append(breaks, 0.5 * (lo + hi))
    grid = _wrap("integrator", TimeGrid.build, system.switch_times, breaks, steps)

    fund = solve_fundamental(system, grid)
    if np.max(np.abs(fund.psi[-1] - np.eye(n))) > 1e-10:
        raise ValidationError("Psi_N differs from the identity", "system.A")
    return ProblemInstance(
        system=system,
        noise=noise,
        goal=goal,
        vset=vset,
        grid=grid,
        fund=fund,
        control_grid=grid.nodes[[grid.locate(t) for t in cgrid]],
        run=dict(cfg.get("run", {}) or {}),
    )


def load_json(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read file: {exc.strerror}", str(path)) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON: {exc}", str(path)) from None


def load_problem(path: str | Path) -> ProblemInstance:
    return compile_problem(load_json(path))


def parse_control(cfg: dict, problem: ProblemInstance, path: str = "control") -> Control:
    """Control document: {grid: [...], values: [[...], ...], constraint: {...}}."""
    grid = _array(_get(cfg, "grid", path), f"{path}.grid", 1)
    values = _array(_get(cfg, "values", path), f"{path}.values")
    if "constraint" in cfg:
        vset = parse_control_set(cfg["constraint"], problem.system.m, f"{path}.constraint")
    else:
        vset = problem.vset
    for i, t in enumerate(grid):
        idx = problem.grid.locate(t)
        if idx is None or idx not in problem.grid.break_indices:
            raise ValidationError(f"grid point {t!r} is not a breakpoint of the problem grid", f"{path}.grid[{i}]")
        grid[i] = problem.grid.nodes[idx]
    return _wrap(path, Control, grid, values, vset)


def load_control(path: str | Path, problem: ProblemInstance) -> Control:
    return parse_control(load_json(path), problem, str(path))


def phi(problem: ProblemInstance, control: Control, mc: McConfig) -> ProbEstimate:
    """phi(u) = g(z_u): z-vectors followed by the indicator estimator."""
    z = compute_z_vectors(problem.fund, problem.system, control)
    return evaluate_g_mc(z, problem.fund.xhat0, problem.noise, problem.goal, mc)


def phi_direct(problem: ProblemInstance, control: Control, mc: McConfig) -> ProbEstimate:
    """phi(u) by integrating the noisy state equation per sample (oracle path)."""
    return _estimate(
        lambda xi: simulate_terminal(problem.system, control, problem.grid, xi),
        problem.noise,
        problem.goal,
        mc,
    )
