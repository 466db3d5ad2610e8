"""Command-line front end.

    hitprob compile CONFIG
    hitprob eval CONFIG [--control FILE] [--samples S] [--seed K]
    hitprob grad-check CONFIG [--control FILE] [--k I] [--samples S] [--seed K]
    hitprob pmp-check CONFIG [--control FILE] [--samples S] [--seed K]
    hitprob optimize CONFIG [--iters T] [--seed K] [--out FILE]
    hitprob examples [1|2|3|all]

Every run produces a JSON report (stdout, or ``--report FILE``).  Exit codes:
0 success, 1 validation error, 2 numerical or regularity error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path
from typing import Any

import numpy as np

from .errors import NotRegularError, NumericalError, ValidationError
from .functional import compare_g_G, evaluate_gaussian_halfspace_exact, gaussian_halfspace_gradient
from .goalset import Halfspace
from .gradient import (
    directional_derivative_mc,
    finite_difference_directional,
    gradient_hk,
    nonsmoothness_suite,
)
from .montecarlo import McConfig
from .noise import GaussianNoise, Normal1D, ProductNoise
from .pmp import Degeneracy, McSchedule, check_degeneracy, optimize, pmp_residual
from .problem import ProblemInstance, compile_problem, load_control, load_json

DEFAULTS = {
    "samples": 100_000,
    "seed": 0,
    "antithetic": False,
    "threads": 1,
    "k": 0,
    "fd_step": 0.02,
    "iters": 20,
    "grad_samples": 20_000,
    "tol": 1e-9,
}


class _Timer:
    def __init__(self):
        self.times: dict[str, float] = {}

    def phase(self, name: str):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.times[name] = time.perf_counter() - self.t0

        return _Ctx()


def _setting(args, run: dict, key: str):
    """Flag value, else the config's ``run`` section, else the default."""
    val = getattr(args, key, None)
    if val is not None:
        return val
    if key in run:
        return run[key]
    if key == "threads" and os.environ.get("HITPROB_THREADS"):
        return int(os.environ["HITPROB_THREADS"])
    return DEFAULTS.get(key)


def _mc(args, run: dict) -> McConfig:
    return McConfig(
        samples=int(_setting(args, run, "samples")),
        seed=int(_setting(args, run, "seed")),
        antithetic=bool(_setting(args, run, "antithetic")),
        threads=int(_setting(args, run, "threads")),
    )


def _control(args, problem: ProblemInstance):
    if args.control is not None:
        path = args.control
    elif problem.run.get("control") is not None:
        # run-section paths are relative to the config file
        path = str(Path(args.config).parent / problem.run["control"])
    else:
        return problem.zero_control(), None
    return load_control(path, problem), str(path)


def _gaussian_halfspace(problem: ProblemInstance) -> bool:
    gaussian = isinstance(problem.noise, GaussianNoise) or (
        isinstance(problem.noise, ProductNoise)
        and all(isinstance(c, Normal1D) for c in problem.noise.components)
    )
    return gaussian and isinstance(problem.goal, Halfspace)


# -- subcommands -------------------------------------------------------------


def cmd_compile(args, problem: ProblemInstance, timer) -> dict:
    fund, grid = problem.fund, problem.grid
    sw = list(grid.switch_indices[1:])
    resid = [float(np.max(np.abs(fund.psi[i] @ fund.phi[s] - fund.phi_at_1))) for i, s in enumerate(sw)]
    return {
        "n": problem.system.n,
        "m": problem.system.m,
        "N": problem.N,
        "xhat0": fund.xhat0.tolist(),
        "psi_residuals": resid,
        "psi_N_identity_error": float(np.max(np.abs(fund.psi[-1] - np.eye(problem.system.n)))),
        "grid": {
            "nodes": len(grid.nodes),
            "segments": len(grid.segments()),
            "steps_per_segment": int(np.diff(grid.break_indices)[0]),
            "switch_times": grid.switch_times.tolist(),
            "control_grid": problem.control_grid.tolist(),
        },
    }


def cmd_eval(args, problem: ProblemInstance, timer) -> dict:
    mc = _mc(args, problem.run)
    control, cpath = _control(args, problem)
    with timer.phase("z_vectors"):
        z = problem.z_vectors(control)
        y = problem.y_values(control)
    with timer.phase("estimate"):
        est = problem.phi(control, mc)
    with timer.phase("g_vs_G"):
        agree = compare_g_G(z, y, problem.fund.psi, problem.fund.xhat0, problem.noise, problem.goal, mc)
    out = {
        "control": cpath,
        "phi": est.to_dict(),
        "g_vs_G": agree.to_dict(),
        "degeneracy": check_degeneracy(z, problem.fund.xhat0, problem.goal).value,
        "z_vectors": z.tolist(),
    }
    if _gaussian_halfspace(problem):
        exact = evaluate_gaussian_halfspace_exact(z, problem.fund.xhat0, problem.noise, problem.goal)
        out["closed_form"] = exact
        out["within_3se"] = abs(est.value - exact) <= 3.0 * est.std_error
    return out


def cmd_grad_check(args, problem: ProblemInstance, timer) -> dict:
    mc = _mc(args, problem.run)
    k = int(_setting(args, problem.run, "k"))
    step = float(_setting(args, problem.run, "fd_step"))
    control, cpath = _control(args, problem)
    z = problem.z_vectors(control)
    x0, noise, goal = problem.fund.xhat0, problem.noise, problem.goal
    closed = None
    if _gaussian_halfspace(problem):
        try:
            closed = gaussian_halfspace_gradient(k, z, x0, noise, goal)
        except NumericalError:
            closed = None
    rows = []
    with timer.phase("directional"):
        for j in range(problem.N):
            score = directional_derivative_mc(k, j, z, x0, noise, goal, mc)
            fd = finite_difference_directional(k, j, z, x0, noise, goal, mc, step)
            row = {
                "j": j,
                "score": score.to_dict(),
                "fd": fd.to_dict(),
                "agree_fd": abs(score.value - fd.value) <= 3.0 * float(np.hypot(score.std_error, fd.std_error)),
            }
            if closed is not None:
                cf = float(closed @ z[j])
                row["closed_form"] = cf
                row["agree_closed_form"] = abs(score.value - cf) <= 3.0 * score.std_error
            rows.append(row)
    out: dict[str, Any] = {"control": cpath, "k": k, "fd_step": step, "rows": rows}
    with timer.phase("gradient"):
        try:
            grad = gradient_hk(k, z, x0, noise, goal, mc)
            out["gradient"] = grad.to_dict()
            if closed is not None:
                out["gradient"]["closed_form"] = closed.tolist()
        except NumericalError as exc:
            out["gradient"] = {"error": str(exc)}
    checks = [r["agree_fd"] for r in rows] + [r.get("agree_closed_form", True) for r in rows]
    out["all_agree"] = all(checks)
    return out


def cmd_pmp_check(args, problem: ProblemInstance, timer) -> dict:
    mc = _mc(args, problem.run)
    control, cpath = _control(args, problem)
    z = problem.z_vectors(control)
    verdict = check_degeneracy(z, problem.fund.xhat0, problem.goal)
    out: dict[str, Any] = {"control": cpath, "degeneracy": verdict.value}
    if verdict is not Degeneracy.NONTRIVIAL:
        out["residual"] = None
        out["note"] = "all z-vectors vanish; no gradient exists at a trivial control"
        return out
    with timer.phase("residual"):
        report = pmp_residual(problem, control, mc)
    out.update(report.to_dict())
    return out


def _write_trace(path: Path, result) -> None:
    n = len(result.phi_trace)
    res = result.residual_trace + [float("nan")] * (n - len(result.residual_trace))
    lines = ["iter phi residual"]
    lines += [f"{i} {p!r} {r!r}" for i, (p, r) in enumerate(zip(result.phi_trace, res))]
    path.write_text("\n".join(lines) + "\n")


def cmd_optimize(args, problem: ProblemInstance, timer) -> dict:
    mc = _mc(args, problem.run)
    iters = int(_setting(args, problem.run, "iters"))
    tol = float(_setting(args, problem.run, "tol"))
    gs = int(_setting(args, problem.run, "grad_samples"))
    init, cpath = _control(args, problem)
    schedule = McSchedule(start=gs, growth=1.5, cap=max(gs, 20 * gs))
    with timer.phase("optimize"):
        result = optimize(problem, init, iters, mc, schedule, tol)
    out = {"init": cpath, **result.to_dict()}
    final = problem.phi(result.control, mc)
    out["final_phi"] = final.to_dict()
    target = args.out if args.out is not None else problem.run.get("out")
    if target:
        target = Path(target)
        target.write_text(json.dumps(result.control.to_dict(), indent=2, sort_keys=True) + "\n")
        trace = target.with_suffix(".trace.txt")
        _write_trace(trace, result)
        out["files"] = {"control": str(target), "trace": str(trace)}
    return out


def cmd_examples(args, timer) -> dict:
    which = ("1", "2", "3") if args.which == "all" else (args.which,)
    samples = args.samples if args.samples is not None else 200_000
    seed = args.seed if args.seed is not None else 0
    threads = args.threads if args.threads is not None else int(os.environ.get("HITPROB_THREADS", "1"))
    with timer.phase("suite"):
        return nonsmoothness_suite(samples=samples, seed=seed, which=which, threads=threads)


# -- driver ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hitprob", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("config", help="problem config (JSON)")
        p.add_argument("--report", help="write the JSON report here instead of stdout")
        p.add_argument("--threads", type=int, help="worker threads (never changes results)")
        p.add_argument("--seed", type=int)
        p.add_argument("--samples", type=int)

    common(sub.add_parser("compile", help="validate a config and summarise the reduction"))
    for name in ("eval", "grad-check", "pmp-check", "optimize"):
        p = sub.add_parser(name)
        common(p)
        p.add_argument("--control", help="control file (JSON); default u = 0 or run.control")
        p.add_argument("--antithetic", action="store_true", default=None)
    gc = sub._name_parser_map["grad-check"]
    gc.add_argument("--k", type=int, help="0-based index of h_k")
    gc.add_argument("--fd-step", dest="fd_step", type=float)
    op = sub._name_parser_map["optimize"]
    op.add_argument("--iters", type=int)
    op.add_argument("--tol", type=float)
    op.add_argument("--grad-samples", dest="grad_samples", type=int)
    op.add_argument("--out", help="write the final control here (plus a .trace.txt file)")
    ex = sub.add_parser("examples", help="nonsmoothness suite for the three example geometries")
    ex.add_argument("which", nargs="?", default="all", choices=["1", "2", "3", "all"])
    common(ex, config=False)
    return parser


COMMANDS = {
    "compile": cmd_compile,
    "eval": cmd_eval,
    "grad-check": cmd_grad_check,
    "pmp-check": cmd_pmp_check,
    "optimize": cmd_optimize,
}


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj)!r}")


def dump_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n"


def report_body(report: dict) -> str:
    """The report without its timings section (the deterministic part)."""
    return dump_report({k: v for k, v in report.items() if k != "timings"})


def run(argv: list[str] | None = None) -> tuple[int, dict]:
    args = build_parser().parse_args(argv)
    timer = _Timer()
    report: dict[str, Any] = {"subcommand": args.subcommand}
    code = 0
    try:
        if args.subcommand == "examples":
            report["config_digest"] = None
            report["seed"] = args.seed if args.seed is not None else 0
            report["results"] = cmd_examples(args, timer)
        else:
            raw = Path(args.config).read_bytes() if Path(args.config).is_file() else b""
            report["config_digest"] = "sha256:" + hashlib.sha256(raw).hexdigest()
            with timer.phase("compile"):
                problem = compile_problem(load_json(args.config))
            report["seed"] = int(_setting(args, problem.run, "seed"))
            report["results"] = COMMANDS[args.subcommand](args, problem, timer)
    except ValidationError as exc:
        code = 1
        report["error"] = {"type": type(exc).__name__, "message": str(exc), "path": exc.path}
    except NumericalError as exc:
        code = 2
        err = {"type": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, NotRegularError):
            err["failed_k"] = exc.failed_k
        report["error"] = err
    report["exit_code"] = code
    report["timings"] = timer.times
    return code, report


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    code, report = run(argv)
    text = dump_report(report)
    target = None
    for i, a in enumerate(argv):
        if a == "--report" and i + 1 < len(argv):
            target = argv[i + 1]
        elif a.startswith("--report="):
            target = a.split("=", 1)[1]
    if target:
        Path(target).write_text(text)
        status = "ok" if code == 0 else report["error"]["message"]
        print(f"{report['subcommand']}: {status} (report: {target})")
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
