"""Goodness-of-fit distances and moment summaries.

Only the statistics are computed; no p-values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, NumericalError


def _finite_sorted(sample, name="sample"):
    x = np.asarray(sample, dtype=float).ravel()
    if x.size == 0:
        raise DomainError(f"{name} is empty")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} contains non-finite values")
    return np.sort(x)


class Ecdf:
    """Right-continuous empirical distribution function."""

    def __init__(self, sample):
        self.x = _finite_sorted(sample)
        self.n = self.x.size

    def __call__(self, t):
        return np.searchsorted(self.x, t, side="right") / self.n

    def __len__(self):
        return self.n


def ks_one_sample(sample, cdf):
    """``sup_x |F_n(x) - F(x)|`` for a continuous ``cdf``."""
    x = _finite_sorted(sample)
    n = x.size
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def ks_two_sample(a, b):
    """``sup_x |F_a(x) - F_b(x)|`` via a sweep over the pooled sample."""
    a = _finite_sorted(a, "a")
    b = _finite_sorted(b, "b")
    pts = np.concatenate([a, b])
    Fa = np.searchsorted(a, pts, side="right") / a.size
    Fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(Fa - Fb)))


def ad_one_sample(sample, cdf):
    """Anderson-Darling ``A^2`` against a fully specified continuous ``cdf``."""
    x = _finite_sorted(sample)
    n = x.size
    F = np.asarray(cdf(x), dtype=float)
    if not np.all((F > 0) & (F < 1)):
        bad = np.flatnonzero(~((F > 0) & (F < 1)))
        raise NumericalError(
            f"cdf is 0 or 1 at sample value(s) {x[bad][:5].tolist()}; A^2 undefined"
        )
    i = np.arange(1, n + 1)
    return float(-n - np.sum((2 * i - 1) * (np.log(F) + np.log1p(-F[::-1]))) / n)


def ad_two_sample(a, b):
    """Two-sample Anderson-Darling statistic (Scholz-Stephens, midrank form).

    Computed over the distinct pooled values ``z_j`` with multiplicities
    ``l_j``::

        A^2 = (N-1)/N^2 sum_k 1/n_k sum_j l_j (N M_kj - n_k B_j)^2
              / (B_j (N - B_j) - N l_j / 4)

    where ``B_j`` and ``M_kj`` are midrank cumulative counts.
    """
    samples = [_finite_sorted(a, "a"), _finite_sorted(b, "b")]
    pooled = np.sort(np.concatenate(samples))
    N = pooled.size
    zj, lj = np.unique(pooled, return_counts=True)
    Bj = np.cumsum(lj) - 0.5 * lj
    denom = Bj * (N - Bj) - N * lj / 4.0
    keep = denom > 0
    total = 0.0
    for s in samples:
        le = np.searchsorted(s, zj, side="right")
        lt = np.searchsorted(s, zj, side="left")
        Mj = 0.5 * (le + lt)
        num = lj * (N * Mj - s.size * Bj) ** 2
        total += np.sum(num[keep] / denom[keep]) / s.size
    return float((N - 1) * total / N**2)


def sample_moments(sample):
    """``(mean, variance, skewness, kurtosis)``.

    Variance uses the ``n - 1`` divisor; skewness ``m3 / m2^{3/2}`` and
    (non-excess) kurtosis ``m4 / m2^2`` use biased central moments.
    """
    x = np.asarray(sample, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise DomainError("need at least two values")
    mean = x.mean()
    d = x - mean
    mean += d.mean()
    d = x - mean
    m2 = np.mean(d * d)
    if m2 == 0:
        raise NumericalError("zero variance: skewness and kurtosis undefined")
    m3 = np.mean(d**3)
    m4 = np.mean(d**4)
    return float(mean), float(m2 * n / (n - 1)), float(m3 / m2**1.5), float(m4 / m2**2)


@dataclass
class MomentAccumulator:
    """Streaming count, mean and central sums M2..M4 that merge associatively.

    Works elementwise on arrays, so one accumulator can track every
    observation index at once.
    """

    count: float = 0
    mean: np.ndarray | float = 0.0
    M2: np.ndarray | float = 0.0
    M3: np.ndarray | float = 0.0
    M4: np.ndarray | float = 0.0

    @classmethod
    def from_batch(cls, values, axis=0):
        v = np.asarray(values, dtype=float)
        n = v.shape[axis]
        mean = v.mean(axis=axis)
        d = v - np.expand_dims(mean, axis)
        return cls(n, mean, (d**2).sum(axis), (d**3).sum(axis), (d**4).sum(axis))

    def merge(self, other):
        na, nb = self.count, other.count
        if na == 0:
            return other
        if nb == 0:
            return self
        n = na + nb
        delta = other.mean - self.mean
        mean = self.mean + delta * nb / n
        M2 = self.M2 + other.M2 + delta**2 * na * nb / n
        M3 = (
            self.M3 + other.M3
            + delta**3 * na * nb * (na - nb) / n**2
            + 3 * delta * (na * other.M2 - nb * self.M2) / n
        )
        M4 = (
            self.M4 + other.M4
            + delta**4 * na * nb * (na * na - na * nb + nb * nb) / n**3
            + 6 * delta**2 * (na * na * other.M2 + nb * nb * self.M2) / n**2
            + 4 * delta * (na * other.M3 - nb * self.M3) / n
        )
        return MomentAccumulator(n, mean, M2, M3, M4)

    __add__ = merge

    @property
    def variance(self):
        return self.M2 / (self.count - 1)

    @property
    def skewness(self):
        m2 = self.M2 / self.count
        return (self.M3 / self.count) / m2**1.5

    @property
    def kurtosis(self):
        m2 = self.M2 / self.count
        return (self.M4 / self.count) / m2**2
