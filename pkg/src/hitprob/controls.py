"""Admissible control sets V and piecewise-constant controls."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .errors import ValidationError

if TYPE_CHECKING:
    from .linsys import TimeGrid


@dataclass(frozen=True)
class ControlSet:
    """V as a box, a centred ball or a finite list of points in R^m."""

    kind: str
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    radius: float | None = None
    dim_: int | None = None
    points: np.ndarray | None = None

    @classmethod
    def box(cls, lo, hi) -> "ControlSet":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValidationError("box bounds must be vectors of equal length")
        if np.any(lo > hi):
            raise ValidationError("box requires lo <= hi componentwise")
        return cls("box", lo=lo, hi=hi)

    @classmethod
    def ball(cls, radius: float, dim: int) -> "ControlSet":
        if not radius > 0:
            raise ValidationError("ball radius must be positive")
        return cls("ball", radius=float(radius), dim_=int(dim))

    @classmethod
    def finite(cls, points) -> "ControlSet":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or len(pts) == 0:
            raise ValidationError("finite control set needs a non-empty list of vectors")
        return cls("finite", points=pts)

    @property
    def dim(self) -> int:
        if self.kind == "box":
            return len(self.lo)
        if self.kind == "ball":
            return self.dim_
        return self.points.shape[1]

    def project(self, v) -> np.ndarray:
        """Nearest point of V (row-wise for 2-D input)."""
        v = np.asarray(v, dtype=float)
        if self.kind == "box":
            return np.clip(v, self.lo, self.hi)
        if self.kind == "ball":
            norm = np.linalg.norm(v, axis=-1, keepdims=True)
            scale = np.where(norm > self.radius, self.radius / np.where(norm > 0, norm, 1.0), 1.0)
            return v * scale
        d = np.linalg.norm(v[..., None, :] - self.points, axis=-1)
        return self.points[np.argmin(d, axis=-1)]

    def to_dict(self) -> dict:
        if self.kind == "box":
            return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}
        if self.kind == "ball":
            return {"kind": "ball", "radius": self.radius, "dim": self.dim_}
        return {"kind": "finite", "points": self.points.tolist()}


@dataclass(frozen=True)
class Control:
    """Piecewise-constant u(t): ``values[k]`` on [breaks[k], breaks[k+1]).

    Values are projected onto ``constraint`` at construction.
    """

    breaks: np.ndarray
    values: np.ndarray
    constraint: ControlSet
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        breaks = np.asarray(self.breaks, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if breaks.ndim != 1 or len(breaks) != len(values) + 1:
            raise ValidationError("control needs len(grid) == len(values) + 1")
        if breaks[0] != 0.0 or breaks[-1] != 1.0 or np.any(np.diff(breaks) <= 0):
            raise ValidationError("control grid must increase strictly from 0 to 1")
        if values.shape[1] != self.constraint.dim:
            raise ValidationError(
                f"control values have dimension {values.shape[1]}, constraint expects {self.constraint.dim}"
            )
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "values", self.constraint.project(values))

    @classmethod
    def constant(cls, breaks, value, constraint: ControlSet) -> "Control":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(breaks, np.tile(value, (len(breaks) - 1, 1)), constraint)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def n_intervals(self) -> int:
        return len(self.values)

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.breaks[:-1] + self.breaks[1:])

    def with_values(self, values) -> "Control":
        return Control(self.breaks, values, self.constraint)

    def value_at(self, t: float) -> np.ndarray:
        k = int(np.clip(np.searchsorted(self.breaks, t, side="right") - 1, 0, self.n_intervals - 1))
        return self.values[k]

    def segment_values(self, grid: "TimeGrid") -> np.ndarray:
        """Control value on every grid segment, shape (n_segments, m)."""
        key = id(grid)
        hit = self._cache.get(key)
        if hit is not None and hit[0] is grid:
            return hit[1]
        for t in self.breaks:
            idx = grid.locate(t)
            if idx is None or idx not in grid.break_indices:
                raise ValidationError(f"control breakpoint {t!r} is not a breakpoint of the time grid")
        starts = grid.nodes[list(grid.break_indices[:-1])]
        k = np.searchsorted(self.breaks, starts + 0.5 * np.diff(grid.breaks), side="right") - 1
        out = self.values[k]
        self._cache[key] = (grid, out)
        return out

    def to_dict(self) -> dict:
        return {
            "grid": self.breaks.tolist(),
            "values": self.values.tolist(),
            "constraint": self.constraint.to_dict(),
        }
