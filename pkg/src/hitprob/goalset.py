"""Closed goal sets Q in R^n and the pulled-back region O(Z) in noise space.

Every set is closed: points on the boundary are members.  Membership is
evaluated row-wise on (S, n) arrays by :meth:`GoalSet.contains_many`;
:meth:`GoalSet.margin` gives the distance-like constraint margin used to
flag samples that land within a tolerance of the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


def _vec(x, name: str) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ValidationError(f"{name} must be a vector")
    return v


class GoalSet:
    kind: str = ""

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def contains_many(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def margin(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Halfspace(GoalSet):
    """{x : <a, x> <= b}."""

    a: np.ndarray
    b: float
    kind = "halfspace"

    def __post_init__(self):
        a = _vec(self.a, "a")
        if not np.any(a != 0):
            raise ValidationError("halfspace normal must be nonzero")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    @property
    def dim(self) -> int:
        return len(self.a)

    def contains_many(self, X):
        return X @ self.a <= self.b

    def margin(self, X):
        return np.abs(X @ self.a - self.b) / np.linalg.norm(self.a)

    def to_dict(self):
        return {"kind": self.kind, "a": self.a.tolist(), "b": self.b}


@dataclass(frozen=True)
class Ball(GoalSet):
    center: np.ndarray
    radius: float
    kind = "ball"

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center, "center"))
        if not self.radius > 0:
            raise ValidationError("ball radius must be positive")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains_many(self, X):
        d = X - self.center
        return np.sum(d * d, axis=-1) <= self.radius**2

    def margin(self, X):
        return np.abs(np.linalg.norm(X - self.center, axis=-1) - self.radius)

    def to_dict(self):
        return {"kind": self.kind, "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True)
class Box(GoalSet):
    lo: np.ndarray
    hi: np.ndarray
    kind = "box"

    def __post_init__(self):
        lo, hi = _vec(self.lo, "lo"), _vec(self.hi, "hi")
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValidationError("box requires lo <= hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains_many(self, X):
        return np.all((X >= self.lo) & (X <= self.hi), axis=-1)

    def margin(self, X):
        inner = np.minimum(X - self.lo, self.hi - X)
        outside = np.linalg.norm(np.maximum(-inner, 0.0), axis=-1)
        return np.where(self.contains_many(X), inner.min(axis=-1), outside)

    def to_dict(self):
        return {"kind": self.kind, "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True)
class DiscInHyperplane(GoalSet):
    """{x : x[fixed_coord] == fixed_value, |x - center| <= radius over the other coords}.

    A lower-dimensional set: every member is a boundary point, and a
    perturbation off the hyperplane leaves it with probability one.
    """

    fixed_coord: int
    fixed_value: float
    center: np.ndarray
    radius: float
    kind = "disc_in_hyperplane"

    def __post_init__(self):
        c = _vec(self.center, "center")
        if not 0 <= self.fixed_coord < len(c):
            raise ValidationError("fixed_coord out of range")
        if not self.radius > 0:
            raise ValidationError("disc radius must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "fixed_value", float(self.fixed_value))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return len(self.center)

    def _split(self, X):
        keep = np.arange(self.dim) != self.fixed_coord
        d = X[..., keep] - self.center[keep]
        return X[..., self.fixed_coord] - self.fixed_value, np.sum(d * d, axis=-1)

    def contains_many(self, X):
        off, rho2 = self._split(X)
        return (off == 0.0) & (rho2 <= self.radius**2)

    def margin(self, X):
        off, rho2 = self._split(X)
        excess = np.maximum(np.sqrt(rho2) - self.radius, 0.0)
        return np.hypot(off, excess)

    def to_dict(self):
        return {
            "kind": self.kind,
            "fixed_coord": self.fixed_coord,
            "fixed_value": self.fixed_value,
            "center": self.center.tolist(),
            "radius": self.radius,
        }


@dataclass(frozen=True)
class AnnulusSector(GoalSet):
    """{x in R^2 : x_1 >= 0, x_2 >= 0, r_lo^2 <= |x|^2 <= r_hi^2}."""

    r_lo: float
    r_hi: float
    kind = "annulus_sector"

    def __post_init__(self):
        if not 0 < self.r_lo < self.r_hi:
            raise ValidationError("annulus sector requires 0 < r_lo < r_hi")
        object.__setattr__(self, "r_lo", float(self.r_lo))
        object.__setattr__(self, "r_hi", float(self.r_hi))

    @property
    def dim(self) -> int:
        return 2

    def contains_many(self, X):
        rho2 = np.sum(X * X, axis=-1)
        return (X[..., 0] >= 0) & (X[..., 1] >= 0) & (rho2 >= self.r_lo**2) & (rho2 <= self.r_hi**2)

    def margin(self, X):
        rho = np.linalg.norm(X, axis=-1)
        parts = [np.abs(X[..., 0]), np.abs(X[..., 1]), np.abs(rho - self.r_lo), np.abs(rho - self.r_hi)]
        return np.min(np.stack(parts), axis=0)

    def to_dict(self):
        return {"kind": self.kind, "r_lo": self.r_lo, "r_hi": self.r_hi}


@dataclass(frozen=True)
class Lens(GoalSet):
    """Intersection of two balls of equal radius."""

    c1: np.ndarray
    c2: np.ndarray
    radius: float
    kind = "lens"

    def __post_init__(self):
        c1, c2 = _vec(self.c1, "c1"), _vec(self.c2, "c2")
        if c1.shape != c2.shape:
            raise ValidationError("lens centres must have equal length")
        if not self.radius > 0:
            raise ValidationError("lens radius must be positive")
        object.__setattr__(self, "c1", c1)
        object.__setattr__(self, "c2", c2)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return len(self.c1)

    def contains_many(self, X):
        r2 = self.radius**2
        d1, d2 = X - self.c1, X - self.c2
        return (np.sum(d1 * d1, axis=-1) <= r2) & (np.sum(d2 * d2, axis=-1) <= r2)

    def margin(self, X):
        m1 = np.abs(np.linalg.norm(X - self.c1, axis=-1) - self.radius)
        m2 = np.abs(np.linalg.norm(X - self.c2, axis=-1) - self.radius)
        return np.minimum(m1, m2)

    def to_dict(self):
        return {"kind": self.kind, "c1": self.c1.tolist(), "c2": self.c2.tolist(), "radius": self.radius}


def _check_dim(q: GoalSet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != q.dim:
        raise ValidationError(f"point has dimension {x.shape[-1]}, goal set lives in R^{q.dim}")
    return x


def contains(q: GoalSet, x) -> bool:
    return bool(q.contains_many(_check_dim(q, x)[None, :])[0])


def shifted_contains(q: GoalSet, xhat0, s) -> bool:
    """Membership of ``s`` in Qhat = Q - xhat0."""
    s = _check_dim(q, s)
    return contains(q, np.asarray(xhat0, dtype=float) + s)


def oz_contains(q: GoalSet, xhat0, z, r) -> bool:
    """r in O(Z), i.e. sum_i r_i z_i lies in Qhat."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if len(r) != len(z):
        raise ValidationError(f"r has length {len(r)}, expected {len(z)}")
    return shifted_contains(q, xhat0, r @ z)


def oz_contains_many(q: GoalSet, xhat0, z, R) -> np.ndarray:
    """Vectorised :func:`oz_contains` over the rows of ``R``."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    return q.contains_many(np.asarray(xhat0, dtype=float) + np.asarray(R, dtype=float) @ z)
