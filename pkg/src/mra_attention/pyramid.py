"""Dyadic average-pooling pyramids of a row-indexed matrix."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def is_power_of_two(s: int) -> bool:
    return isinstance(s, (int, np.integer)) and s >= 1 and (s & (s - 1)) == 0


@dataclass(frozen=True)
class Pyramid:
    """Pooled copies of a matrix at scales 1, 2, 4, ..., ``max_scale``.

    Row ``i`` (0-based) of ``level(s)`` is the mean of source rows
    ``s*i .. s*i + s - 1``.
    """

    base_n: int
    d: int
    levels: dict[int, np.ndarray] = field(repr=False)

    @property
    def max_scale(self) -> int:
        return max(self.levels)

    def level(self, s: int) -> np.ndarray:
        try:
            return self.levels[s]
        except KeyError:
            raise KeyError(
                f"scale {s} not in pyramid (max scale {self.max_scale})"
            ) from None


def build_pyramid(X: np.ndarray, max_scale: int) -> Pyramid:
    """Pool ``X`` by repeated pairwise row averaging up to ``max_scale``.

    Each level halves the row count: ``0.5 * X[2i] + 0.5 * X[2i + 1]``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("pyramid source must be 2D")
    n, d = X.shape
    if not is_power_of_two(max_scale):
        raise ValueError(f"max_scale {max_scale} is not a power of two")
    if n % max_scale:
        raise ValueError(f"max_scale {max_scale} does not divide n={n}")
    levels = {1: X}
    cur, s = X, 1
    while s < max_scale:
        cur = 0.5 * cur[0::2] + 0.5 * cur[1::2]
        s *= 2
        levels[s] = cur
    return Pyramid(base_n=n, d=d, levels=levels)
