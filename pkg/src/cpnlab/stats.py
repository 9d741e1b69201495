"""Streaming estimators, empirical characteristic functions, random streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1
CI99 = 2.5758293035489004


class StatsError(ValueError):
    pass


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class RngStream:
    """Counter-based stream keyed by (seed, stream_id).

    Backed by Philox4x64 with the 128-bit key ``seed | stream_id << 64``; the
    triple (seed, stream_id, counter) fixes every draw.
    """

    def __init__(self, seed: int, stream_id: int = 0, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.counter = int(counter)
        bitgen = np.random.Philox(key=self.seed | (self.stream_id << 64),
                                  counter=[self.counter, 0, 0, 0])
        self.generator = np.random.Generator(bitgen)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def substream(self, k: int) -> "RngStream":
        """Independent child stream; depends only on (seed, stream_id, k)."""
        child = splitmix64(self.stream_id ^ splitmix64((int(k) + 0x632BE59BD9B4E019) & _MASK64))
        return RngStream(self.seed, child)

    def spawn(self, n: int) -> list["RngStream"]:
        return [self.substream(k) for k in range(n)]

    # thin delegation, so callers need not reach into ``generator``
    def random(self, size=None):
        return self.generator.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def poisson(self, lam, size=None):
        return self.generator.poisson(lam, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def choice(self, a, size=None, p=None):
        return self.generator.choice(a, size=size, p=p)


@dataclass
class EstimatorAccumulator:
    """Welford mean/variance plus a batch-means buffer; mergeable."""

    batch_size: int = 64
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    batch_means: list = field(default_factory=list)
    pending: list = field(default_factory=list)

    def __post_init__(self):
        if self.batch_size < 1:
            raise StatsError("batch_size must be >= 1")

    def push(self, x: float) -> None:
        x = float(x)
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)
        self.pending.append(x)
        if len(self.pending) == self.batch_size:
            self.batch_means.append(math.fsum(self.pending) / self.batch_size)
            self.pending = []

    def extend(self, xs) -> None:
        for x in np.asarray(xs, dtype=np.float64).ravel():
            self.push(x)

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0


def merge(a: EstimatorAccumulator, b: EstimatorAccumulator) -> EstimatorAccumulator:
    """Combine two accumulators (Chan et al. pairwise update)."""
    if a.batch_size != b.batch_size:
        raise StatsError(f"incompatible batch sizes {a.batch_size} and {b.batch_size}")
    if a.count == 0 or b.count == 0:
        src = b if a.count == 0 else a
        return EstimatorAccumulator(src.batch_size, src.count, src.mean, src.m2,
                                    list(src.batch_means), list(src.pending))
    out = EstimatorAccumulator(a.batch_size)
    n = a.count + b.count
    out.count = n
    if n:
        delta = b.mean - a.mean
        out.mean = (a.count * a.mean + b.count * b.mean) / n
        out.m2 = a.m2 + b.m2 + delta * delta * a.count * b.count / n
    out.batch_means = list(a.batch_means) + list(b.batch_means)
    pending = list(a.pending) + list(b.pending)
    while len(pending) >= out.batch_size:
        out.batch_means.append(math.fsum(pending[:out.batch_size]) / out.batch_size)
        pending = pending[out.batch_size:]
    out.pending = pending
    return out


def summarize(acc: EstimatorAccumulator) -> tuple[float, float]:
    """(mean, batch-means standard error)."""
    k = len(acc.batch_means)
    if k < 2:
        raise StatsError(f"need at least 2 complete batches, have {k}")
    bm = np.asarray(acc.batch_means)
    return acc.mean, float(np.std(bm, ddof=1) / math.sqrt(k))


def batch_means_stderr(x, n_batches: int = 32) -> float:
    """Standard error of the mean of a correlated series from ``n_batches`` equal batches."""
    x = np.asarray(x, dtype=np.float64)
    b = x.size // n_batches
    if b < 1 or n_batches < 2:
        raise StatsError("series too short for batch means")
    bm = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(np.std(bm, ddof=1) / math.sqrt(n_batches))


def ecf_estimate(samples, t_grid):
    """Empirical characteristic function and the conservative 99% CI radius.

    The radius 2.58/sqrt(N) bounds each of the real and imaginary parts, since
    both are averages of variables with variance at most 1.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 100:
        raise StatsError(f"ecf_estimate needs >= 100 samples, got {x.size}")
    t = np.asarray(t_grid, dtype=np.float64)
    est = np.empty(t.shape, dtype=np.complex128)
    for i, ti in enumerate(t.ravel()):
        est.flat[i] = np.mean(np.exp(1j * ti * x)) if ti != 0 else 1.0
    return est, CI99 / math.sqrt(x.size)


def ecf_stderr(samples, t_grid):
    """Per-t standard error of |ECF - CF| from the sample variances of cos and sin."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    t = np.asarray(t_grid, dtype=np.float64)
    out = np.empty(t.shape)
    for i, ti in enumerate(t.ravel()):
        out.flat[i] = math.sqrt((np.var(np.cos(ti * x)) + np.var(np.sin(ti * x))) / x.size)
    return out
