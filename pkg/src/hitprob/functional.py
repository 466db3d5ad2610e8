"""The goal functional phi(u) = g(z_1..z_N) = G(y_1..y_N) by Monte Carlo.

g(z) = P(sum_i xi_i z_i in Qhat) and G(y) = P(sum_i chi_i Psi_i y_i in Qhat)
with Qhat = Q - xhat0.  The gaussian/halfspace pair has a closed form used as
an oracle, together with its gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import NumericalError, ValidationError
from .goalset import GoalSet, Halfspace
from .montecarlo import McConfig, mc_mean
from .noise import GaussianNoise, NoiseModel, ProductNoise, chi_transform, sample_block

BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class ProbEstimate:
    value: float
    std_error: float
    samples: int
    boundary_count: int = 0

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "samples": self.samples,
            "boundary_count": self.boundary_count,
        }


def _check(z, xhat0, noise: NoiseModel, q: GoalSet):
    z = np.atleast_2d(np.asarray(z, dtype=float))
    xhat0 = np.asarray(xhat0, dtype=float)
    if len(z) != noise.dim:
        raise ValidationError(f"{len(z)} z-vectors but noise dimension {noise.dim}")
    if z.shape[1] != q.dim or xhat0.shape != (q.dim,):
        raise ValidationError("state dimension disagrees with goal set")
    return z, xhat0


def _estimate(states_fn, noise: NoiseModel, q: GoalSet, mc: McConfig) -> ProbEstimate:
    def fn(xi):
        X = states_fn(xi)
        inside = q.contains_many(X)
        near = q.margin(X) <= BOUNDARY_TOL
        return np.stack([inside, near], axis=1)

    res = mc_mean(fn, noise, mc)
    p = float(res.mean[0])
    if mc.antithetic:
        se = float(res.std_error[0])
    else:
        se = float(np.sqrt(p * (1.0 - p) / mc.samples))
    # mean of the near-boundary flag times the sample count (pairs included)
    near = int(round(res.mean[1] * mc.samples))
    return ProbEstimate(value=p, std_error=se, samples=mc.samples, boundary_count=near)


def evaluate_g_mc(z, xhat0, noise: NoiseModel, q: GoalSet, mc: McConfig) -> ProbEstimate:
    """Indicator-mean estimate of g(z) on the shared sample stream."""
    z, xhat0 = _check(z, xhat0, noise, q)
    return _estimate(lambda xi: xhat0 + xi @ z, noise, q, mc)


def g_states(z, xhat0, xi) -> np.ndarray:
    return np.asarray(xhat0) + np.asarray(xi) @ np.atleast_2d(z)


def G_states(y, psi, xhat0, xi) -> np.ndarray:
    py = np.einsum("kij,kj->ki", np.asarray(psi), np.asarray(y))
    return np.asarray(xhat0) + chi_transform(xi) @ py


def evaluate_G_mc(y, psi, xhat0, noise: NoiseModel, q: GoalSet, mc: McConfig) -> ProbEstimate:
    """Estimate G(y) = P(sum chi_i Psi_i y_i in Qhat) on the same stream as g."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    psi = np.asarray(psi, dtype=float)
    if len(y) != noise.dim or len(psi) != noise.dim:
        raise ValidationError("need N trajectory values and N Psi matrices")
    _check(y, xhat0, noise, q)
    xhat0 = np.asarray(xhat0, dtype=float)
    return _estimate(lambda xi: G_states(y, psi, xhat0, xi), noise, q, mc)


@dataclass(frozen=True)
class GGAgreement:
    samples: int
    disagreements: int
    unexplained: int
    max_state_gap: float

    @property
    def agreement(self) -> float:
        return 1.0 - self.disagreements / self.samples

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "disagreements": self.disagreements,
            "unexplained": self.unexplained,
            "agreement": self.agreement,
            "max_state_gap": self.max_state_gap,
        }


def compare_g_G(z, y, psi, xhat0, noise: NoiseModel, q: GoalSet, mc: McConfig) -> GGAgreement:
    """Sample-by-sample comparison of the g and G indicators.

    A disagreement is *explained* when either state lies within
    BOUNDARY_TOL of the boundary.  ``max_state_gap`` is measured over the
    first 4096 samples only.
    """
    z, xhat0 = _check(z, xhat0, noise, q)

    def fn(xi):
        Xg = g_states(z, xhat0, xi)
        XG = G_states(y, psi, xhat0, xi)
        differ = q.contains_many(Xg) != q.contains_many(XG)
        near = (q.margin(Xg) <= BOUNDARY_TOL) | (q.margin(XG) <= BOUNDARY_TOL)
        gap = np.max(np.abs(Xg - XG), axis=1)
        return np.stack([differ, differ & ~near, gap], axis=1)

    plain = McConfig(mc.samples, mc.seed, False, mc.threads)
    res = mc_mean(fn, noise, plain)
    head = sample_block(noise, mc.seed, 0, min(mc.samples, 4096))
    gap = float(np.max(np.abs(g_states(z, xhat0, head) - G_states(y, psi, xhat0, head))))
    return GGAgreement(
        samples=mc.samples,
        disagreements=int(round(res.mean[0] * mc.samples)),
        unexplained=int(round(res.mean[1] * mc.samples)),
        max_state_gap=gap,
    )


def _gaussian(noise: NoiseModel) -> GaussianNoise:
    if isinstance(noise, GaussianNoise):
        return noise
    if isinstance(noise, ProductNoise):
        return noise.as_gaussian()
    raise ValidationError("closed form requires gaussian noise")


def evaluate_gaussian_halfspace_exact(z, xhat0, noise: NoiseModel, q: GoalSet) -> float:
    """P(<a, xhat0 + sum xi_i z_i> <= b) for gaussian xi."""
    if not isinstance(q, Halfspace):
        raise ValidationError("closed form requires a halfspace goal set")
    g = _gaussian(noise)
    z, xhat0 = _check(z, xhat0, g, q)
    w = z @ q.a
    slack = q.b - q.a @ xhat0 - g.mean @ w
    sigma = float(np.sqrt(max(w @ g.cov @ w, 0.0)))
    if sigma == 0.0:
        return 1.0 if slack >= 0 else 0.0
    return float(special.ndtr(slack / sigma))


def gaussian_halfspace_gradient(k: int, z, xhat0, noise: NoiseModel, q: GoalSet) -> np.ndarray:
    """Gradient of the closed-form g with respect to z_k.

    With w_i = <a, z_i>, s = b - <a, xhat0> - mean.w and sigma^2 = w' C w,
    g = Phi_N(s / sigma) and

        d g / d z_k = pdf(s/sigma) * (-mean_k / sigma - s (C w)_k / sigma^3) * a.
    """
    if not isinstance(q, Halfspace):
        raise ValidationError("closed form requires a halfspace goal set")
    g = _gaussian(noise)
    z, xhat0 = _check(z, xhat0, g, q)
    w = z @ q.a
    slack = q.b - q.a @ xhat0 - g.mean @ w
    cw = g.cov @ w
    sigma = float(np.sqrt(max(w @ cw, 0.0)))
    if sigma == 0.0:
        raise NumericalError("closed form not differentiable where <a, z_i> = 0 for all i")
    alpha = slack / sigma
    dalpha = -g.mean[k] / sigma - slack * cw[k] / sigma**3
    pdf = np.exp(-0.5 * alpha * alpha) / np.sqrt(2.0 * np.pi)
    return pdf * dalpha * q.a
