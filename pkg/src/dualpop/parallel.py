"""Seed derivation and mergeable running statistics for replicate runs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["replicate_seeds", "chunk_bounds", "RunningStats"]


def replicate_seeds(master: int, n: int, key: int = 0) -> np.ndarray:
    """32-bit seeds for replicates ``0..n-1``.

    Seed ``i`` depends only on ``(master, key, i)``, so a run with more
    replicates extends a shorter one instead of reshuffling it.
    """
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(int(key),))
    return ss.generate_state(n, dtype=np.uint32).astype(np.int64)


def chunk_bounds(n: int, size: int) -> list[tuple[int, int]]:
    return [(a, min(a + size, n)) for a in range(0, n, size)] or [(0, 0)]


@dataclass(frozen=True)
class RunningStats:
    """Count, mean and centred sum of squares, merged with Chan's formula."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, x) -> "RunningStats":
        x = np.asarray(x, dtype=float)
        if x.size == 0:
            return cls()
        mu = float(x.mean())
        return cls(int(x.size), mu, float(((x - mu) ** 2).sum()))

    def merge(self, other: "RunningStats") -> "RunningStats":
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        n = self.count + other.count
        d = other.mean - self.mean
        mean = self.mean + d * other.count / n
        m2 = self.m2 + other.m2 + d * d * self.count * other.count / n
        return RunningStats(n, mean, m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def stderr(self) -> float:
        return float(np.sqrt(self.variance / self.count)) if self.count > 1 else 0.0
