"""Mergeable sufficient statistics for realization-level Monte Carlo values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RunningStats:
    """Count, mean and centred sum of squares of a scalar sample.

    Merging uses the pairwise update of Chan, Golub and LeVeque, so shards
    can be reduced in any fixed order.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, values) -> "RunningStats":
        v = np.asarray(values, dtype=float).ravel()
        if not v.size:
            return cls()
        mu = float(v.mean())
        return cls(int(v.size), mu, float(((v - mu) ** 2).sum()))

    def merge(self, other: "RunningStats") -> "RunningStats":
        if not other.count:
            return RunningStats(self.count, self.mean, self.m2)
        if not self.count:
            return RunningStats(other.count, other.mean, other.m2)
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return RunningStats(n, mean, m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else float("nan")

    @property
    def stderr(self) -> float:
        if self.count < 2:
            return float("nan")
        return float(np.sqrt(max(self.variance, 0.0) / self.count))
