"""Keyed random streams and the small estimators used by the verifiers.

Streams are numpy ``Generator`` objects over the counter-based Philox bit
generator, keyed through ``SeedSequence(master_seed, spawn_key=path)``.  The
same key always yields the same stream and distinct paths yield independent
streams, so replicas and particles can be given streams without coordination.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from ._jit import njit

__all__ = [
    "StreamKey",
    "Purpose",
    "BLOCK_SIZE",
    "replica_blocks",
    "draw_exponential",
    "draw_categorical",
    "mean_ci",
    "Z99",
]

# Replicas are grouped into fixed-size blocks that share one stream; the
# block layout never depends on the worker count.
BLOCK_SIZE = 8192
Z99 = 2.576
_MASK64 = (1 << 64) - 1


class Purpose:
    """Path tags separating the stream families of different drivers."""

    SIMULATE = 1
    SNAPSHOT = 2
    COUPLING = 3
    GENERATOR = 4
    RESTART_A = 5
    RESTART_B = 6
    RESTART_SELF = 7
    TENSOR = 8
    BBM = 9
    NONFELLER = 10
    METRIC = 11
    BOUND = 12
    MOVEMENT = 13
    SUITE = 14


@dataclass(frozen=True)
class StreamKey:
    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "path", tuple(int(p) for p in self.path))
        if any(p < 0 for p in self.path):
            raise ValueError("stream path entries must be non-negative")

    def child(self, *path: int) -> "StreamKey":
        return StreamKey(self.seed, self.path + tuple(path))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))

    def __str__(self):
        return f"{self.seed}/" + "/".join(str(p) for p in self.path)


def replica_blocks(key: StreamKey, n: int, block: int = BLOCK_SIZE) -> Iterator[tuple[int, int, StreamKey]]:
    """Yield ``(start, count, key)`` for consecutive replica blocks."""
    if n < 0:
        raise ValueError("replica count must be non-negative")
    if block < 1:
        raise ValueError("block size must be positive")
    for b, start in enumerate(range(0, n, block)):
        yield start, min(block, n - start), key.child(b)


@njit
def uniform_open(rng):
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return u


@njit
def exp_draw(rng, rate):
    return -math.log(uniform_open(rng)) / rate


@njit
def categorical_draw(rng, cum):
    """Index drawn proportionally to the increments of cumulative weights ``cum``."""
    u = rng.random() * cum[cum.shape[0] - 1]
    lo = 0
    hi = cum.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if u < cum[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit
def _exp_draws(rng, rate, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = exp_draw(rng, rate)
    return out


@njit
def _categorical_draws(rng, cum, n):
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = categorical_draw(rng, cum)
    return out


def draw_exponential(rng: np.random.Generator, rate: float, size: int | None = None):
    """Inverse-transform exponential draw ``-ln(U)/rate``; an array if ``size`` is given."""
    if not rate > 0 or math.isinf(rate):
        raise ValueError(f"exponential rate must be positive and finite, got {rate}")
    if size is not None:
        return _exp_draws(rng, float(rate), int(size))
    return float(exp_draw(rng, float(rate)))


def draw_categorical(rng: np.random.Generator, weights: Sequence[float], size: int | None = None):
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    cum = np.cumsum(w)
    if not cum[-1] > 0:
        raise ValueError("weights sum to zero")
    if size is not None:
        return _categorical_draws(rng, cum, int(size))
    return int(categorical_draw(rng, cum))


def mean_ci(samples) -> tuple[float, float, tuple[float, float]]:
    """Mean, standard error and 99% normal interval."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(x.size))
    return mean, se, (mean - Z99 * se, mean + Z99 * se)
