"""Sample cross-covariance between two fields."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionMismatchError, InsufficientDataError
from .tps import LocationSet


@dataclass(frozen=True, eq=False)
class PairedSample:
    """Observations ``y1`` (n x p1) and ``y2`` (n x p2); rows are time."""

    y1: np.ndarray
    y2: np.ndarray
    locs1: LocationSet | None = None
    locs2: LocationSet | None = None

    def __post_init__(self):
        y1 = np.atleast_2d(np.asarray(self.y1, dtype=float))
        y2 = np.atleast_2d(np.asarray(self.y2, dtype=float))
        if y1.shape[0] != y2.shape[0]:
            raise DimensionMismatchError(
                f"y1 has {y1.shape[0]} rows but y2 has {y2.shape[0]}"
            )
        if y1.shape[0] < 2:
            raise InsufficientDataError("need at least 2 rows")
        for y, locs, name in ((y1, self.locs1, "y1"), (y2, self.locs2, "y2")):
            if locs is not None and y.shape[1] != locs.size:
                raise DimensionMismatchError(
                    f"{name} has {y.shape[1]} columns but {locs.size} locations"
                )
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y2", y2)

    @property
    def n(self):
        return self.y1.shape[0]

    def subset(self, rows):
        """Sub-sample with the given row indices (no minimum-size check)."""
        rows = np.asarray(rows)
        new = object.__new__(PairedSample)
        object.__setattr__(new, "y1", self.y1[rows])
        object.__setattr__(new, "y2", self.y2[rows])
        object.__setattr__(new, "locs1", self.locs1)
        object.__setattr__(new, "locs2", self.locs2)
        return new


@dataclass(frozen=True, eq=False)
class CrossCovMatrix:
    s12: np.ndarray
    n_used: int

    @property
    def shape(self):
        return self.s12.shape


def center_columns(y):
    y = np.asarray(y, dtype=float)
    return y - y.mean(axis=0, keepdims=True)


def cross_cov(y1, y2, center=False):
    """``Y1' Y2 / n`` for raw arrays, optionally column-centred first."""
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    n = y1.shape[0]
    if center:
        if n < 2:
            raise InsufficientDataError("centering needs at least 2 rows")
        y1, y2 = center_columns(y1), center_columns(y2)
    if n < 1:
        raise InsufficientDataError("no rows")
    return y1.T @ y2 / n


def sample_cross_cov(sample: PairedSample, center: bool = False) -> CrossCovMatrix:
    """Sample cross-covariance with divisor ``n`` (not ``n - 1``)."""
    return CrossCovMatrix(cross_cov(sample.y1, sample.y2, center), sample.n)


def max_singular_value(s12) -> float:
    s12 = s12.s12 if isinstance(s12, CrossCovMatrix) else np.asarray(s12, dtype=float)
    if s12.size == 0:
        return 0.0
    return float(np.linalg.norm(s12, 2))
