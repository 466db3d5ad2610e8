"""Directional derivatives and gradients of h_k(z_k) = g(z_1, .., z_k, .., z_N).

Perturbing z_k by eps * z_j is the same as replacing xi_j by xi_j + eps * xi_k,
so the derivative is minus the integral over O(Z) of d(r_k f)/d r_j.  By the
product rule d(r_k f)/d r_j = (delta_kj + r_k d log f / d r_j) f, hence

    dh_k/dz_j = -E[ 1{xi in O(Z)} (delta_kj + xi_k score_j(xi)) ],

which is estimated on the shared counter-based sample stream.  Gradients are
assembled from n such directional derivatives with the dual basis of the
selected z-vectors.  All indices are 0-based.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import NotABasisError, NumericalError, ScoreUndefinedError, ValidationError
from .functional import _check, evaluate_g_mc
from .goalset import AnnulusSector, DiscInHyperplane, GoalSet, Lens, oz_contains_many
from .montecarlo import McConfig, mc_mean
from .noise import GaussianNoise, NoiseModel

MAX_CONDITION = 1e12
ZERO_VECTOR = 1e-12


@dataclass(frozen=True)
class GradEstimate:
    value: float
    std_error: float
    samples: int

    def to_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "samples": self.samples}


@dataclass(frozen=True)
class DualBasis:
    """Rows ``e[i]`` satisfy <e^i, z_j> = delta_ij for the basis columns."""

    e: np.ndarray
    gram_condition: float


def _check_index(name: str, i: int, N: int) -> None:
    if not 0 <= i < N:
        raise ValidationError(f"{name}={i} out of range 0..{N - 1}")


def _require_score(noise: NoiseModel, j: int) -> None:
    if not noise.differentiable_in(j):
        raise ScoreUndefinedError(f"score undefined: density not differentiable in r_{j}")


def _score_terms(k: int, js: Sequence[int], z, xhat0, q: GoalSet, noise: NoiseModel):
    """Per-sample -1_O(xi) (delta_kj + xi_k score_j(xi)) for every j in ``js``."""
    js = np.asarray(js)
    delta = (js == k).astype(float)

    def fn(xi):
        inside = oz_contains_many(q, xhat0, z, xi).astype(float)
        score = noise.score(xi)[:, js]
        return -inside[:, None] * (delta + xi[:, [k]] * score)

    return fn


def directional_derivative_mc(
    k: int, j: int, z, xhat0, noise: NoiseModel, q: GoalSet, mc: McConfig
) -> GradEstimate:
    """Score-function estimate of dh_k/dz_j (derivative of h_k along z_j)."""
    z, xhat0 = _check(z, xhat0, noise, q)
    _check_index("k", k, len(z))
    _check_index("j", j, len(z))
    _require_score(noise, j)
    res = mc_mean(_score_terms(k, [j], z, xhat0, q, noise), noise, mc)
    return GradEstimate(float(res.mean[0]), float(res.std_error[0]), mc.samples)


def _perturbed(z: np.ndarray, k: int, direction: np.ndarray, eps: float) -> np.ndarray:
    out = z.copy()
    out[k] = z[k] + eps * direction
    return out


def finite_difference_directional(
    k: int, j: int, z, xhat0, noise: NoiseModel, q: GoalSet, mc: McConfig, step: float
) -> GradEstimate:
    """Central difference of h_k along z_j with common random numbers."""
    if not step > 0:
        raise ValidationError("step must be positive")
    z, xhat0 = _check(z, xhat0, noise, q)
    _check_index("k", k, len(z))
    _check_index("j", j, len(z))
    return _central_difference(k, z[j], z, xhat0, noise, q, mc, step)


def _central_difference(k, direction, z, xhat0, noise, q, mc, step) -> GradEstimate:
    zp = _perturbed(z, k, direction, step)
    zm = _perturbed(z, k, direction, -step)

    def fn(xi):
        up = oz_contains_many(q, xhat0, zp, xi).astype(float)
        dn = oz_contains_many(q, xhat0, zm, xi).astype(float)
        return (up - dn) / (2.0 * step)

    res = mc_mean(fn, noise, mc)
    return GradEstimate(float(res.mean[0]), float(res.std_error[0]), mc.samples)


def finite_difference_gradient(
    k: int, z, xhat0, noise: NoiseModel, q: GoalSet, mc: McConfig, step: float
) -> tuple[np.ndarray, np.ndarray]:
    """Coordinate-wise central differences of h_k; returns (value, std_error)."""
    z, xhat0 = _check(z, xhat0, noise, q)
    _check_index("k", k, len(z))
    n = z.shape[1]
    est = [_central_difference(k, np.eye(n)[i], z, xhat0, noise, q, mc, step) for i in range(n)]
    return np.array([e.value for e in est]), np.array([e.std_error for e in est])


def dual_basis(z_basis) -> DualBasis:
    """Solve Z^T E = I where the columns of Z are the basis vectors."""
    zb = np.atleast_2d(np.asarray(z_basis, dtype=float))
    n = zb.shape[1]
    if zb.shape != (n, n):
        raise ValidationError(f"need {n} basis vectors of length {n}, got shape {zb.shape}")
    if np.any(np.linalg.norm(zb, axis=1) <= ZERO_VECTOR):
        raise NotABasisError("not a basis: contains a zero vector")
    cond = float(np.linalg.cond(zb))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NotABasisError(f"not a basis: condition number {cond:.3g}")
    lu = linalg.lu_factor(zb)  # zb is Z^T
    e = linalg.lu_solve(lu, np.eye(n)).T
    return DualBasis(e=e, gram_condition=cond)


def select_basis(z) -> list[int]:
    """n indices of z-vectors chosen by column-pivoted QR (greedy volume)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    N, n = z.shape
    if N < n:
        raise NotABasisError(f"not a basis: only N={N} z-vectors in R^{n}", subspace_dim=N)
    _, r, piv = linalg.qr(z.T, pivoting=True, mode="economic")
    diag = np.abs(np.diag(r))
    scale = max(diag.max(initial=0.0), ZERO_VECTOR)
    rank = int(np.sum(diag > scale * 1e-12)) if diag.max(initial=0.0) > ZERO_VECTOR else 0
    if rank < n:
        warnings.warn(
            f"z-vectors span a subspace of dimension {rank} < {n}; "
            "h_k is only differentiable along that subspace",
            stacklevel=2,
        )
        raise NotABasisError(f"not a basis: z-vectors span dimension {rank} < {n}", subspace_dim=rank)
    return sorted(int(i) for i in piv[:n])


@dataclass(frozen=True)
class GradientResult:
    value: np.ndarray
    std_error: np.ndarray
    directional: tuple
    basis_indices: tuple
    dual: DualBasis
    samples: int

    def to_dict(self) -> dict:
        return {
            "value": self.value.tolist(),
            "std_error": self.std_error.tolist(),
            "directional": [d.to_dict() for d in self.directional],
            "basis_indices": list(self.basis_indices),
            "gram_condition": self.dual.gram_condition,
            "samples": self.samples,
        }


def assemble_gradient(directional: np.ndarray, z_basis: np.ndarray, dual: DualBasis) -> np.ndarray:
    """sum_j sum_i d_j <e^j, e^i> z_i, the basis-expansion form."""
    gram = dual.e @ dual.e.T
    return (directional @ gram) @ z_basis


def gradient_hk(
    k: int,
    z,
    xhat0,
    noise: NoiseModel,
    q: GoalSet,
    mc: McConfig,
    basis_indices: Sequence[int] | None = None,
) -> GradientResult:
    """Gradient of h_k at z_k from n directional derivatives.

    Both the basis-expansion form and sum_j d_j e^j are computed; they must
    agree to 1e-10 (relative to the gradient scale) and the latter is
    returned.  Per-component standard errors come from the per-sample
    gradient contributions.
    """
    z, xhat0 = _check(z, xhat0, noise, q)
    N, n = z.shape
    _check_index("k", k, N)
    idx = list(basis_indices) if basis_indices is not None else select_basis(z)
    if len(idx) != n:
        raise NotABasisError(f"not a basis: need {n} indices, got {len(idx)}")
    for j in idx:
        _check_index("basis index", j, N)
        _require_score(noise, j)
    zb = z[idx]
    dual = dual_basis(zb)

    terms = _score_terms(k, idx, z, xhat0, q, noise)

    def fn(xi):
        c = terms(xi)
        return np.hstack([c, c @ dual.e])

    res = mc_mean(fn, noise, mc)
    d = res.mean[:n]
    grad = d @ dual.e
    expanded = assemble_gradient(d, zb, dual)
    scale = max(1.0, float(np.abs(grad).max()))
    if np.max(np.abs(expanded - grad)) > 1e-10 * scale * max(1.0, dual.gram_condition):
        raise NumericalError("gradient assembly forms disagree")
    directional = tuple(GradEstimate(float(d[i]), float(res.std_error[i]), mc.samples) for i in range(n))
    return GradientResult(
        value=grad,
        std_error=res.std_error[n:],
        directional=directional,
        basis_indices=tuple(idx),
        dual=dual,
        samples=mc.samples,
    )


# -- nonsmooth examples ------------------------------------------------------


@dataclass(frozen=True)
class OneSided:
    right: GradEstimate
    left: GradEstimate
    gap: float
    combined_se: float
    step: float

    @property
    def differs(self) -> bool:
        return abs(self.gap) > 3.0 * self.combined_se

    def to_dict(self) -> dict:
        return {
            "right": self.right.to_dict(),
            "left": self.left.to_dict(),
            "gap": self.gap,
            "combined_se": self.combined_se,
            "step": self.step,
            "differs": self.differs,
        }


def one_sided_quotients(k, direction, z, xhat0, noise, q, mc, step) -> OneSided:
    """Forward and backward difference quotients of h_k along ``direction``."""
    z, xhat0 = _check(z, xhat0, noise, q)
    direction = np.asarray(direction, dtype=float)
    zp = _perturbed(z, k, direction, step)
    zm = _perturbed(z, k, direction, -step)

    def fn(xi):
        h0 = oz_contains_many(q, xhat0, z, xi).astype(float)
        hp = oz_contains_many(q, xhat0, zp, xi).astype(float)
        hm = oz_contains_many(q, xhat0, zm, xi).astype(float)
        return np.stack([(hp - h0) / step, (h0 - hm) / step], axis=1)

    res = mc_mean(fn, noise, mc)
    right = GradEstimate(float(res.mean[0]), float(res.std_error[0]), mc.samples)
    left = GradEstimate(float(res.mean[1]), float(res.std_error[1]), mc.samples)
    return OneSided(
        right=right,
        left=left,
        gap=right.value - left.value,
        combined_se=float(np.hypot(right.std_error, left.std_error)),
        step=step,
    )


@dataclass(frozen=True)
class ExampleSpec:
    name: str
    goal: GoalSet
    z: np.ndarray
    noise: NoiseModel
    region: tuple | None = None


def nonsmooth_examples() -> dict[str, ExampleSpec]:
    """The three nonsmooth geometries with the noise laws used to probe them."""
    return {
        "1": ExampleSpec(
            "disc in the hyperplane x1 = 0",
            DiscInHyperplane(0, 0.0, [0.0, 2.0, 2.0], 1.0),
            np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]),
            GaussianNoise.standard(2),
        ),
        "2": ExampleSpec(
            "annulus sector 1 <= |x|^2 <= 2 in the first quadrant",
            AnnulusSector(1.0, np.sqrt(2.0)),
            np.array([[0.0, 1.0]]),
            GaussianNoise([1.2], [[0.3**2]]),
            region=(1.0, float(np.sqrt(2.0))),
        ),
        "3": ExampleSpec(
            "lens of two radius-5 discs centred at (7,0) and (0,7)",
            Lens([7.0, 0.0], [0.0, 7.0], 5.0),
            np.array([[1.0, 1.0]]),
            GaussianNoise([3.5], [[0.5**2]]),
            region=(3.0, 4.0),
        ),
    }


def scan_region(ex: ExampleSpec, lo: float = -1.0, hi: float = 6.0, points: int = 70_001) -> tuple[float, float]:
    """Smallest and largest scalar r on a uniform scan with r*z in Q."""
    r = np.linspace(lo, hi, points)
    inside = oz_contains_many(ex.goal, np.zeros(ex.goal.dim), ex.z, r[:, None])
    if not inside.any():
        return (float("nan"), float("nan"))
    return float(r[inside].min()), float(r[inside].max())


def nonsmoothness_suite(
    samples: int = 200_000, seed: int = 0, which: Sequence[str] = ("1", "2", "3"), threads: int = 1
) -> dict:
    """Probe the three examples for discontinuity and kinks of h_k.

    Example 1: h(z*) > 0 while perturbing z_1 off the hyperplane gives h = 0.
    Examples 2 and 3: forward and backward difference quotients disagree.
    """
    mc = McConfig(samples, seed, threads=threads)
    exs = nonsmooth_examples()
    out = {}
    for key in which:
        ex = exs[key]
        x0 = np.zeros(ex.goal.dim)
        rep: dict = {"name": ex.name}
        if key == "1":
            base = evaluate_g_mc(ex.z, x0, ex.noise, ex.goal, mc)
            perturbed = {}
            for delta in (1e-3, 1e-2):
                zp = _perturbed(ex.z, 0, np.array([1.0, 0.0, 0.0]), delta)
                perturbed[repr(delta)] = evaluate_g_mc(zp, x0, ex.noise, ex.goal, mc).to_dict()
            rep["h"] = base.to_dict()
            rep["h_perturbed"] = perturbed
            rep["downward_jump"] = base.value > 0.01 and all(p["value"] == 0.0 for p in perturbed.values())
        else:
            direction = np.array([1.0, 0.0]) if key == "2" else np.array([1.0, -1.0]) / np.sqrt(2.0)
            step = 1e-2 if key == "2" else 1e-3
            rep["h"] = evaluate_g_mc(ex.z, x0, ex.noise, ex.goal, mc).to_dict()
            rep["direction"] = direction.tolist()
            rep["one_sided"] = one_sided_quotients(0, direction, ex.z, x0, ex.noise, ex.goal, mc, step).to_dict()
            lo, hi = scan_region(ex)
            rep["region_scan"] = [lo, hi]
            rep["region_expected"] = list(ex.region)
        out[key] = rep
    return out
