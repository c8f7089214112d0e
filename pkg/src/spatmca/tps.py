"""Thin-plate / natural cubic spline machinery.

Patterns are represented at the observation sites and extended to the
whole domain by the interpolating spline

    f(s) = sum_i a_i g(|s - s_i|) + b_0 + sum_l b_l x_l,

whose coefficients solve the bordered system ``[[G, E], [E', 0]] (a, b) =
(f, 0)``.  The roughness of ``f`` is the quadratic form ``f' Omega f``
where ``Omega`` is the top-left block of the inverse bordered matrix.

Note that the d=2 kernel uses the constant ``1/(16 pi)``; some references
use ``1/(8 pi)``.  The difference only rescales the smoothness parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.special import gamma

from .exceptions import (
    DimensionMismatchError,
    SingularGeometryError,
    UnsupportedDimensionError,
)

#: bordered systems whose 2-norm condition number exceeds this are rejected
MAX_CONDITION = 1e12


def _check_dim(d):
    if d not in (1, 2, 3):
        raise UnsupportedDimensionError(f"dimension must be 1, 2 or 3, got {d}")


@dataclass(frozen=True, eq=False)
class LocationSet:
    """``p`` distinct sites in ``d`` dimensions, stored as a (p, d) array."""

    sites: np.ndarray

    def __post_init__(self):
        sites = np.asarray(self.sites, dtype=float)
        if sites.ndim == 1:
            sites = sites[:, None]
        if sites.ndim != 2:
            raise DimensionMismatchError("sites must be a (p, d) array")
        _check_dim(sites.shape[1])
        if not np.all(np.isfinite(sites)):
            raise SingularGeometryError("site coordinates must be finite")
        p, d = sites.shape
        if p < d + 2:
            raise SingularGeometryError(f"need at least d + 2 = {d + 2} sites, got {p}")
        if np.any(pdist(sites) == 0.0):
            raise SingularGeometryError("duplicate sites")
        sites.setflags(write=False)
        object.__setattr__(self, "sites", sites)

    @property
    def dim(self) -> int:
        return self.sites.shape[1]

    @property
    def size(self) -> int:
        return self.sites.shape[0]

    def __len__(self):
        return self.size

    @classmethod
    def grid(cls, lower, upper, num, dim=1):
        """Regular grid with ``num`` equally spaced points per axis."""
        axis = np.linspace(lower, upper, num)
        mesh = np.meshgrid(*([axis] * dim), indexing="ij")
        return cls(np.column_stack([m.ravel() for m in mesh]))


@dataclass(frozen=True, eq=False)
class SplineCoefficients:
    kernel_weights: np.ndarray
    affine_weights: np.ndarray


def radial_kernel(r, d):
    """Radial basis ``g(r)`` for dimension ``d``; accepts scalars or arrays.

    ``g(0) = 0`` for every ``d`` (the limit value).
    """
    _check_dim(d)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be nonnegative")
    if d == 2:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(r > 0, r * r * np.log(np.where(r > 0, r, 1.0)), 0.0)
        out = out / (16.0 * math.pi)
    else:
        const = gamma(d / 2.0 - 2.0) / (16.0 * math.pi ** (d / 2.0))
        out = const * r ** (4 - d)
    return out if out.ndim else float(out)


def affine_design(sites):
    """``E``: rows ``(1, s_i')``."""
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    return np.hstack([np.ones((sites.shape[0], 1)), sites])


def build_bordered_system(locs: LocationSet):
    """Return ``(G, E)`` for the sites in ``locs``."""
    G = radial_kernel(cdist(locs.sites, locs.sites), locs.dim)
    np.fill_diagonal(G, 0.0)
    G = 0.5 * (G + G.T)
    return G, affine_design(locs.sites)


def _bordered_matrix(locs):
    G, E = build_bordered_system(locs)
    m = E.shape[1]
    B = np.block([[G, E], [E.T, np.zeros((m, m))]])
    cond = np.linalg.cond(B)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularGeometryError(
            f"bordered spline system is singular or ill-conditioned (cond={cond:.3g})"
        )
    return B


def roughness_matrix(locs: LocationSet) -> np.ndarray:
    """Roughness penalty matrix ``Omega`` (p x p, symmetric PSD).

    ``u' Omega u`` equals ``a' G a`` for the interpolating spline of ``u``.
    """
    B = _bordered_matrix(locs)
    p = locs.size
    A = np.linalg.inv(B)[:p, :p]
    return 0.5 * (A + A.T)


def solve_spline(locs: LocationSet, values) -> SplineCoefficients:
    """Interpolating spline coefficients for ``values`` observed at ``locs``."""
    values = np.asarray(values, dtype=float)
    if values.shape != (locs.size,):
        raise DimensionMismatchError(
            f"expected {locs.size} values, got shape {values.shape}"
        )
    B = _bordered_matrix(locs)
    rhs = np.concatenate([values, np.zeros(locs.dim + 1)])
    sol = np.linalg.solve(B, rhs)
    return SplineCoefficients(sol[: locs.size], sol[locs.size :])


def solve_splines(locs: LocationSet, values) -> list[SplineCoefficients]:
    """Vectorised :func:`solve_spline` for the columns of a (p, K) array."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] != locs.size:
        raise DimensionMismatchError(
            f"expected a ({locs.size}, K) array, got shape {values.shape}"
        )
    B = _bordered_matrix(locs)
    rhs = np.vstack([values, np.zeros((locs.dim + 1, values.shape[1]))])
    sol = np.linalg.solve(B, rhs)
    p = locs.size
    return [SplineCoefficients(sol[:p, k], sol[p:, k]) for k in range(values.shape[1])]


def _as_query(query, d):
    query = np.asarray(query, dtype=float)
    if query.size == 0:
        return query.reshape(0, d)
    if query.ndim == 1:
        query = query[:, None] if d == 1 else query[None, :]
    if query.ndim != 2 or query.shape[1] != d:
        raise DimensionMismatchError(
            f"query points must have {d} coordinates, got shape {query.shape}"
        )
    return query


def evaluate_basis(locs: LocationSet, query) -> np.ndarray:
    """Matrix mapping (a, b) to spline values at ``query``: ``[g(|s*-s_i|), 1, s*']``."""
    query = _as_query(query, locs.dim)
    K = radial_kernel(cdist(query, locs.sites), locs.dim) if len(query) else np.zeros((0, locs.size))
    return np.hstack([K, affine_design(query) if len(query) else np.zeros((0, locs.dim + 1))])


def evaluate_spline(coef: SplineCoefficients, locs: LocationSet, query) -> np.ndarray:
    """Evaluate the spline with coefficients ``coef`` (knots ``locs``) at ``query``."""
    basis = evaluate_basis(locs, query)
    return basis @ np.concatenate([coef.kernel_weights, coef.affine_weights])
