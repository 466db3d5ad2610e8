"""Random vector xi = (xi_1, ..., xi_N): laws, counter-based sampling, scores.

Sample ``index`` under ``seed`` is a pure function of the pair.  Raw bits come
from the Philox-4x64 counter-based generator keyed by ``seed``; sample ``i``
owns the raw words ``[i*S, (i+1)*S)`` of the stream, with ``S`` the number
of components rounded up to a whole Philox block (4 words).  Any contiguous
range of samples is therefore generated by starting the counter at
``i0 * S / 4``, independently of how a Monte Carlo run is split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .errors import ScoreUndefinedError, ValidationError

_MASK64 = (1 << 64) - 1
_TWO_M53 = 2.0**-53


def _raw_block(seed: int, start: int, count: int, dim: int) -> np.ndarray:
    blocks = -(-dim // 4)
    stride = 4 * blocks
    bitgen = np.random.Philox(key=int(seed) & _MASK64, counter=int(start) * blocks)
    raw = bitgen.random_raw(count * stride).reshape(count, stride)
    return raw[:, :dim]


def uniform_half_open(raw: np.ndarray) -> np.ndarray:
    """53-bit uniforms on [0, 1)."""
    return (raw >> np.uint64(11)).astype(float) * _TWO_M53


def uniform_open(raw: np.ndarray) -> np.ndarray:
    """53-bit uniforms on (0, 1), used for inverse-CDF transforms."""
    return ((raw >> np.uint64(11)).astype(float) + 0.5) * _TWO_M53


@dataclass(frozen=True)
class GaussianNoise:
    """xi ~ N(mean, cov) with cov symmetric positive definite."""

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (len(mean), len(mean)):
            raise ValidationError("gaussian mean/covariance shapes disagree")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValidationError("covariance must be symmetric")
        try:
            chol = linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError:
            raise ValidationError("covariance must be positive definite") from None
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "chol", chol)

    @classmethod
    def standard(cls, dim: int) -> "GaussianNoise":
        return cls(np.zeros(dim), np.eye(dim))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def from_raw(self, raw: np.ndarray) -> np.ndarray:
        std = special.ndtri(uniform_open(raw))
        return self.mean + std @ self.chol.T

    def log_density(self, r) -> np.ndarray:
        d = np.asarray(r, dtype=float) - self.mean
        sol = linalg.cho_solve((self.chol, True), np.atleast_2d(d).T).T
        quad = np.sum(np.atleast_2d(d) * sol, axis=-1)
        logdet = 2.0 * np.sum(np.log(np.diag(self.chol)))
        out = -0.5 * (quad + logdet + self.dim * np.log(2.0 * np.pi))
        return out if np.ndim(r) > 1 else out[0]

    def score(self, r) -> np.ndarray:
        """grad log f = -cov^{-1}(r - mean), row-wise."""
        d = np.atleast_2d(np.asarray(r, dtype=float) - self.mean)
        out = -linalg.cho_solve((self.chol, True), d.T).T
        return out if np.ndim(r) > 1 else out[0]

    def differentiable_in(self, j: int) -> bool:
        return True

    def as_gaussian(self) -> "GaussianNoise":
        return self

    def to_dict(self) -> dict:
        return {"kind": "gaussian", "mean": self.mean.tolist(), "cov": self.cov.tolist()}


@dataclass(frozen=True)
class Normal1D:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValidationError("gaussian sigma must be positive")


@dataclass(frozen=True)
class Uniform1D:
    a: float
    b: float

    def __post_init__(self):
        if not self.b > self.a:
            raise ValidationError("uniform requires a < b")


@dataclass(frozen=True)
class ProductNoise:
    """Independent components, each Normal1D or Uniform1D."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps or not all(isinstance(c, (Normal1D, Uniform1D)) for c in comps):
            raise ValidationError("product noise needs a non-empty list of 1-D laws")
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def mean(self) -> np.ndarray:
        return np.array([c.mu if isinstance(c, Normal1D) else 0.5 * (c.a + c.b) for c in self.components])

    def from_raw(self, raw: np.ndarray) -> np.ndarray:
        out = np.empty(raw.shape, dtype=float)
        for i, c in enumerate(self.components):
            if isinstance(c, Normal1D):
                out[:, i] = c.mu + c.sigma * special.ndtri(uniform_open(raw[:, i]))
            else:
                out[:, i] = c.a + (c.b - c.a) * uniform_half_open(raw[:, i])
        return out

    def log_density(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        rr = np.atleast_2d(r)
        total = np.zeros(len(rr))
        for i, c in enumerate(self.components):
            x = rr[:, i]
            if isinstance(c, Normal1D):
                total += -0.5 * ((x - c.mu) / c.sigma) ** 2 - np.log(c.sigma * np.sqrt(2.0 * np.pi))
            else:
                inside = (x >= c.a) & (x <= c.b)
                total += np.where(inside, -np.log(c.b - c.a), -np.inf)
        return total if r.ndim > 1 else total[0]

    def score(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        rr = np.atleast_2d(r)
        out = np.empty(rr.shape)
        for i, c in enumerate(self.components):
            x = rr[:, i]
            if isinstance(c, Normal1D):
                out[:, i] = -(x - c.mu) / c.sigma**2
            else:
                if np.any((x <= c.a) | (x >= c.b)):
                    raise ScoreUndefinedError(
                        f"score undefined: component {i} is uniform and r is not interior"
                    )
                out[:, i] = 0.0
        return out if r.ndim > 1 else out[0]

    def differentiable_in(self, j: int) -> bool:
        return isinstance(self.components[j], Normal1D)

    def as_gaussian(self) -> GaussianNoise:
        if not all(isinstance(c, Normal1D) for c in self.components):
            raise ValidationError("product noise with uniform components is not gaussian")
        return GaussianNoise(
            np.array([c.mu for c in self.components]),
            np.diag([c.sigma**2 for c in self.components]),
        )

    def to_dict(self) -> dict:
        comps = []
        for c in self.components:
            if isinstance(c, Normal1D):
                comps.append({"kind": "gaussian", "mu": c.mu, "sigma": c.sigma})
            else:
                comps.append({"kind": "uniform", "a": c.a, "b": c.b})
        return {"kind": "product", "components": comps}


NoiseModel = GaussianNoise | ProductNoise


def sample_block(model: NoiseModel, seed: int, start: int, count: int) -> np.ndarray:
    """Samples ``start .. start+count-1`` as a (count, N) array."""
    if count == 0:
        return np.empty((0, model.dim))
    return model.from_raw(_raw_block(seed, start, count, model.dim))


def sample(model: NoiseModel, seed: int, index: int) -> np.ndarray:
    """The single realisation number ``index`` under ``seed``."""
    return sample_block(model, seed, index, 1)[0]


def log_density_grad(model: NoiseModel, r, j: int) -> float:
    """d log f / d r_j at ``r`` (0-based ``j``)."""
    r = np.asarray(r, dtype=float)
    if not 0 <= j < model.dim:
        raise ValidationError(f"component index {j} out of range 0..{model.dim - 1}")
    if not model.differentiable_in(j):
        raise ScoreUndefinedError(f"score undefined: density is not differentiable in r_{j}")
    return float(model.score(r)[j])


def chi_transform(xi) -> np.ndarray:
    """chi_i = xi_i - xi_{i+1} (i < N), chi_N = xi_N; works row-wise."""
    xi = np.asarray(xi, dtype=float)
    chi = xi.copy()
    chi[..., :-1] -= xi[..., 1:]
    return chi


def chi_inverse(chi) -> np.ndarray:
    """xi_i = sum_{l >= i} chi_l, accumulated from the last component down."""
    chi = np.asarray(chi, dtype=float)
    xi = np.empty_like(chi)
    acc = np.zeros(chi.shape[:-1])
    for i in range(chi.shape[-1] - 1, -1, -1):
        acc = acc + chi[..., i]
        xi[..., i] = acc
    return xi
