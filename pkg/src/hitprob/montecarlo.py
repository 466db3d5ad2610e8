"""Chunked, thread-count-independent Monte Carlo means.

Samples are processed in fixed-size chunks of consecutive indices; per-chunk
partial sums are combined by pairwise summation in chunk order, so the result
does not depend on how many worker threads evaluated the chunks.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError
from .noise import GaussianNoise, NoiseModel, sample_block

CHUNK = 1 << 16


@dataclass(frozen=True)
class McConfig:
    samples: int
    seed: int = 0
    antithetic: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.samples < 1:
            raise ValidationError("samples must be >= 1")
        if self.antithetic and self.samples % 2:
            raise ValidationError("antithetic sampling needs an even sample count")

    def with_samples(self, samples: int) -> "McConfig":
        return McConfig(samples, self.seed, self.antithetic, self.threads)


def default_threads() -> int:
    env = os.environ.get("HITPROB_THREADS")
    return max(1, int(env)) if env else 1


def _pairwise(parts: list):
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


@dataclass(frozen=True)
class MeanResult:
    mean: np.ndarray
    std_error: np.ndarray
    samples: int


def mc_mean(
    fn: Callable[[np.ndarray], np.ndarray],
    noise: NoiseModel,
    mc: McConfig,
) -> MeanResult:
    """Estimate E[fn(xi)] where ``fn`` maps (c, N) draws to (c, d) values.

    With ``mc.antithetic`` the draws come in pairs (xi, 2*mean - xi) built
    from sample indices 0..samples/2-1, and the standard error is computed
    from pair averages.
    """
    if mc.antithetic and not isinstance(noise, GaussianNoise):
        raise ValidationError("antithetic sampling requires gaussian noise")
    base_count = mc.samples // 2 if mc.antithetic else mc.samples
    ranges = [(s, min(CHUNK, base_count - s)) for s in range(0, base_count, CHUNK)]

    def work(rng):
        start, count = rng
        xi = sample_block(noise, mc.seed, start, count)
        if mc.antithetic:
            vals = np.asarray(fn(np.vstack([xi, 2.0 * noise.mean - xi])), dtype=float)
            vals = vals.reshape(2 * count, -1)
            units = 0.5 * (vals[:count] + vals[count:])
        else:
            units = np.asarray(fn(xi), dtype=float).reshape(count, -1)
        return np.stack([units.sum(axis=0), (units * units).sum(axis=0)])

    threads = max(1, int(mc.threads))
    if threads > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, ranges))
    else:
        parts = [work(r) for r in ranges]
    total = _pairwise(parts)
    mean = total[0] / base_count
    if base_count > 1:
        var = np.maximum(total[1] - base_count * mean * mean, 0.0) / (base_count - 1)
    else:
        var = np.zeros_like(mean)
    return MeanResult(mean=mean, std_error=np.sqrt(var / base_count), samples=mc.samples)
