"""Probability measures carried by a uniform grid.

Sums use numpy's pairwise summation: deterministic for a given array and
accurate to a few ulps times ``log2(size)``, which matters for the long
limit-shape grids where ``math.fsum`` dominates the run time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class GridMeasure:
    """Weights on the points ``origin + spacing * k``; the weights sum to 1."""

    origin: float
    spacing: float
    weights: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        if weights.ndim != 1 or weights.size == 0:
            raise ValueError("weights must be a non-empty vector")
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")
        if (weights < 0).any() or not np.isfinite(weights).all():
            raise ValueError("weights must be finite and non-negative")
        total = float(np.sum(weights))
        if not total > 0:
            raise ValueError("measure has no mass")
        weights = weights / total
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_density(cls, points, density) -> GridMeasure:
        """Normalized measure from samples of a density on a uniform grid."""
        points = np.asarray(points, dtype=float)
        return cls(float(points[0]), float(points[1] - points[0]), np.asarray(density, dtype=float))

    @property
    def points(self) -> np.ndarray:
        return self.origin + self.spacing * np.arange(self.weights.size)

    def mean(self) -> float:
        return float(np.dot(self.points, self.weights))

    def moment(self, order: int = 2) -> float:
        return float(np.dot(self.points**order, self.weights))

    def participation(self) -> float:
        """Inverse participation ``sum w_k**2 / spacing`` (a density-squared integral)."""
        return float(np.dot(self.weights, self.weights)) / self.spacing

    def recentered(self) -> GridMeasure:
        return GridMeasure(self.origin - self.mean(), self.spacing, self.weights)
