"""Fitted model: singular values, cross-covariance reconstruction, prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .admm import CoupledPatterns, PenaltyConfig, solve
from .crosscov import CrossCovMatrix
from .exceptions import DimensionMismatchError
from .tps import LocationSet, evaluate_basis, roughness_matrix, solve_splines


def estimate_d(patterns, s12) -> np.ndarray:
    """``d_k = max(u_k' S12 v_k, 0)``.

    Accepts a :class:`CoupledPatterns` or a ``(U, V)`` tuple.
    """
    u, v = (patterns.u_hat, patterns.v_hat) if isinstance(patterns, CoupledPatterns) else patterns
    s = s12.s12 if isinstance(s12, CrossCovMatrix) else np.asarray(s12, dtype=float)
    if u.shape[0] != s.shape[0] or v.shape[0] != s.shape[1]:
        raise DimensionMismatchError(f"patterns {u.shape}/{v.shape} do not match S12 {s.shape}")
    return np.maximum(np.einsum("ik,ij,jk->k", u, s, v), 0.0)


def low_rank(u, d, v):
    """``U diag(d) V'``."""
    return (u * d) @ v.T


def _coef_matrix(splines):
    return np.column_stack([np.concatenate([c.kernel_weights, c.affine_weights]) for c in splines])


@dataclass(frozen=True, eq=False)
class CoupledPatternModel:
    patterns: CoupledPatterns
    d_hat: np.ndarray
    u_splines: list
    v_splines: list
    locs1: LocationSet
    locs2: LocationSet
    config: PenaltyConfig

    @property
    def rank(self):
        return len(self.d_hat)

    @property
    def u_hat(self):
        return self.patterns.u_hat

    @property
    def v_hat(self):
        return self.patterns.v_hat

    @classmethod
    def assemble(cls, patterns, s12, locs1, locs2, config):
        """Estimate ``d`` and fit the pattern splines once, up front."""
        d_hat = estimate_d(patterns, s12)
        return cls(
            patterns,
            d_hat,
            solve_splines(locs1, patterns.u_hat),
            solve_splines(locs2, patterns.v_hat),
            locs1,
            locs2,
            config,
        )


def fit(s12, locs1, locs2, config: PenaltyConfig, omega1=None, omega2=None, **solve_kw):
    """Solve for the coupled patterns and assemble the full model."""
    if omega1 is None:
        omega1 = roughness_matrix(locs1)
    if omega2 is None:
        omega2 = roughness_matrix(locs2)
    patterns = solve(s12, omega1, omega2, config, **solve_kw)
    return CoupledPatternModel.assemble(patterns, s12, locs1, locs2, config)


def reconstruct_cross_cov(model: CoupledPatternModel, at_knots=True, query1=None, query2=None):
    """Cross-covariance at the knots, or at query locations if ``at_knots`` is false."""
    if at_knots:
        return low_rank(model.u_hat, model.d_hat, model.v_hat)
    if query1 is None or query2 is None:
        raise ValueError("query locations are required when at_knots is False")
    return predict_cross_cov(model, query1, query2)


def predict_patterns(model: CoupledPatternModel, query1, query2):
    """Pattern values at arbitrary locations: ``(|q1| x K, |q2| x K)``."""
    u = evaluate_basis(model.locs1, query1) @ _coef_matrix(model.u_splines)
    v = evaluate_basis(model.locs2, query2) @ _coef_matrix(model.v_splines)
    return u, v


def predict_cross_cov(model: CoupledPatternModel, query1, query2):
    """``sum_k d_k u_k(s1) v_k(s2)`` over all query pairs."""
    u, v = predict_patterns(model, query1, query2)
    return low_rank(u, model.d_hat, v)
