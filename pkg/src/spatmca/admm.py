"""ADMM solver for regularized maximum covariance analysis.

Maximizes

    tr(G' Theta G) - tau2u * sum|U| - tau2v * sum|V|,    G = (U; V),

subject to ``U'U = V'V = I``, where ``Theta = [[-tau1u Omega1, S12/2],
[S12'/2, -tau1v Omega2]]``.  The problem is split as ``G = R = Q`` with
``R`` carrying the lasso term and ``Q`` the orthogonality constraint.
Each multiplier is paired with its own constraint: ``gamma_r`` with
``G - R`` and ``gamma_q`` with ``G - Q``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .crosscov import CrossCovMatrix, max_singular_value
from .exceptions import DimensionMismatchError, InvalidConfigError, ZetaTooSmallError


class DegenerateProjectionWarning(RuntimeWarning):
    """Polar factor requested for a rank-deficient block."""


@dataclass(frozen=True)
class PenaltyConfig:
    """Tuning values and solver controls.

    ``zeta="auto"`` resolves to ten times the largest singular value of
    the cross-covariance matrix being factored.
    """

    tau1u: float = 0.0
    tau2u: float = 0.0
    tau1v: float = 0.0
    tau2v: float = 0.0
    rank_k: int = 1
    zeta: Union[float, str] = "auto"
    tol: float = 1e-4
    max_iter: int = 10000

    def __post_init__(self):
        for name in ("tau1u", "tau2u", "tau1v", "tau2v"):
            val = getattr(self, name)
            if not (val >= 0 and math.isfinite(val)):
                raise InvalidConfigError(f"{name} must be a nonnegative finite number, got {val}")
        if int(self.rank_k) != self.rank_k or self.rank_k < 1:
            raise InvalidConfigError(f"rank_k must be a positive integer, got {self.rank_k}")
        if self.zeta != "auto" and not (isinstance(self.zeta, (int, float)) and self.zeta > 0):
            raise InvalidConfigError(f"zeta must be positive or 'auto', got {self.zeta!r}")
        if not self.tol > 0:
            raise InvalidConfigError("tol must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise InvalidConfigError("max_iter must be a positive integer")

    @property
    def taus(self):
        return (self.tau1u, self.tau2u, self.tau1v, self.tau2v)

    def with_taus(self, tau1u=None, tau2u=None, tau1v=None, tau2v=None, **kw):
        upd = {k: v for k, v in dict(tau1u=tau1u, tau2u=tau2u, tau1v=tau1v, tau2v=tau2v).items()
               if v is not None}
        return replace(self, **upd, **kw)


@dataclass
class SolverState:
    g: np.ndarray
    r: np.ndarray
    q: np.ndarray
    gamma_r: np.ndarray
    gamma_q: np.ndarray
    p1: int
    iter: int = 0
    residuals: tuple = (math.inf, math.inf, math.inf)

    def copy(self):
        return SolverState(self.g.copy(), self.r.copy(), self.q.copy(),
                           self.gamma_r.copy(), self.gamma_q.copy(), self.p1,
                           self.iter, self.residuals)


@dataclass
class CoupledPatterns:
    """Solver output.

    ``u_hat``/``v_hat`` have orthonormal columns ordered so that
    ``u_k' S12 v_k`` is non-increasing.  ``state`` is the final iterate in
    the solver's original column order, usable as a warm start.
    """

    u_hat: np.ndarray
    v_hat: np.ndarray
    converged: bool
    iterations: int
    zeta: float
    residuals: tuple
    state: Optional[SolverState] = field(default=None, repr=False)


@dataclass(frozen=True, eq=False)
class ThetaFactor:
    """Cholesky factor of ``zeta * I - Theta``, reusable across iterations."""

    theta: np.ndarray
    zeta: float
    cho: tuple

    @property
    def p(self):
        return self.theta.shape[0]


def _s12_array(s12):
    return s12.s12 if isinstance(s12, CrossCovMatrix) else np.asarray(s12, dtype=float)


def build_theta(s12, omega1, omega2, tau1u, tau1v):
    s = _s12_array(s12)
    omega1 = np.asarray(omega1, dtype=float)
    omega2 = np.asarray(omega2, dtype=float)
    p1, p2 = s.shape
    if omega1.shape != (p1, p1) or omega2.shape != (p2, p2):
        raise DimensionMismatchError(
            f"S12 is {p1}x{p2} but Omega1 is {omega1.shape} and Omega2 is {omega2.shape}"
        )
    return np.block([[-tau1u * omega1, 0.5 * s], [0.5 * s.T, -tau1v * omega2]])


def soft_threshold(x, tau):
    """``sign(x) * max(|x| - tau, 0)``, elementwise."""
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def factorize(theta, zeta) -> ThetaFactor:
    """Factor ``zeta * I - Theta``; raises :class:`ZetaTooSmallError` if not PD."""
    theta = np.asarray(theta, dtype=float)
    mat = zeta * np.eye(theta.shape[0]) - theta
    try:
        cho = cho_factor(mat, lower=True, check_finite=False)
    except LinAlgError:
        raise ZetaTooSmallError(
            f"zeta={zeta:.6g} does not make zeta*I - Theta positive definite; increase zeta"
        ) from None
    # cho_factor can succeed on matrices that are numerically singular
    if not np.all(np.diag(cho[0]) > 0) or not np.all(np.isfinite(cho[0])):
        raise ZetaTooSmallError(f"zeta={zeta:.6g} is too small; increase zeta")
    return ThetaFactor(theta, float(zeta), cho)


def auto_zeta(s12) -> float:
    """Ten times the largest singular value of ``S12``."""
    return 10.0 * max_singular_value(_s12_array(s12))


def resolve_factor(s12, omega1, omega2, config: PenaltyConfig) -> ThetaFactor:
    """Build Theta and factor it with the configured or automatic zeta.

    In automatic mode zeta is raised past the bound ``lambda_max(Theta) <=
    sigma_max(S12) / 2`` (valid since the roughness blocks are negative
    semi-definite) and doubled until the factorization succeeds.
    """
    theta = build_theta(s12, omega1, omega2, config.tau1u, config.tau1v)
    if config.zeta != "auto":
        return factorize(theta, float(config.zeta))
    sigma = max_singular_value(_s12_array(s12))
    zeta = 10.0 * sigma
    if not zeta > 0.5 * sigma or zeta <= 0:
        zeta = max(sigma, 1.0)
    for _ in range(60):
        try:
            return factorize(theta, zeta)
        except ZetaTooSmallError:
            zeta *= 2.0
    raise ZetaTooSmallError("could not find a zeta making zeta*I - Theta positive definite")


def update_g(state: SolverState, theta, zeta, factor: ThetaFactor | None = None):
    """``G = 1/2 (zeta I - Theta)^{-1} (zeta (R + Q) - gamma_r - gamma_q)``."""
    if factor is None or factor.zeta != zeta:
        factor = factorize(theta, zeta)
    rhs = zeta * (state.r + state.q) - state.gamma_r - state.gamma_q
    return 0.5 * cho_solve(factor.cho, rhs, check_finite=False)


def _row_thresholds(p1, p, tau2u, tau2v):
    thr = np.empty((p, 1))
    thr[:p1] = tau2u
    thr[p1:] = tau2v
    return thr


def update_r(state: SolverState, zeta, tau2u, tau2v):
    """Lasso step: ``(1/zeta) * S_tau(zeta * G + gamma_r)`` with per-field tau."""
    thr = _row_thresholds(state.p1, state.g.shape[0], tau2u, tau2v)
    return soft_threshold(zeta * state.g + state.gamma_r, thr) / zeta


def polar_factor(m, warn=True):
    """Nearest matrix with orthonormal columns: ``E F'`` from ``M = E L F'``."""
    if m.shape[1] == 1:
        nrm = np.linalg.norm(m)
        if nrm > 0:
            return m / nrm
        if warn:
            warnings.warn("zero block in orthogonal projection", DegenerateProjectionWarning,
                          stacklevel=2)
        out = np.zeros_like(m)
        out[0, 0] = 1.0
        return out
    e, s, ft = np.linalg.svd(m, full_matrices=False)
    if warn and s[-1] < 1e-12 * max(s[0], np.finfo(float).tiny):
        warnings.warn("rank-deficient block in orthogonal projection",
                      DegenerateProjectionWarning, stacklevel=2)
    return e @ ft


def update_q(state: SolverState, zeta):
    """Per-field polar factor of ``zeta * G + gamma_q``."""
    m = zeta * state.g + state.gamma_q
    p1 = state.p1
    return np.vstack([polar_factor(m[:p1]), polar_factor(m[p1:])])


def update_multipliers(state: SolverState, zeta):
    return (state.gamma_r + zeta * (state.g - state.r),
            state.gamma_q + zeta * (state.g - state.q))


def initial_state(s12, k) -> SolverState:
    """``G = R = Q`` = stacked leading ``k`` singular vectors of S12, zero multipliers."""
    s = _s12_array(s12)
    p1, p2 = s.shape
    u, _, vt = np.linalg.svd(s, full_matrices=False)
    g = np.vstack([u[:, :k], vt[:k].T])
    zeros = np.zeros_like(g)
    return SolverState(g.copy(), g.copy(), g.copy(), zeros, zeros.copy(), p1)


def _support_refine(q, r, max_iter=2000, tol=1e-12):
    """Orthonormal-column matrix with the zero pattern of ``r``, near ``q``.

    Alternates between masking and the polar projection.  Returns ``None``
    when no such matrix is found to ``tol``.
    """
    mask = r != 0
    if mask.all():
        return q
    if not mask.any(axis=0).all():
        return None
    k = q.shape[1]
    eye = np.eye(k)
    x = np.where(mask, q, 0.0)
    for _ in range(max_iter):
        if k == 1:
            return x / np.linalg.norm(x)
        if np.abs(x.T @ x - eye).max() <= tol:
            return x
        x = np.where(mask, polar_factor(x, warn=False), 0.0)
    return None


def _finalize(q, r, p1, s):
    u, v = q[:p1].copy(), q[p1:].copy()
    ur = _support_refine(u, r[:p1])
    vr = _support_refine(v, r[p1:])
    if ur is not None and vr is not None:
        u, v = ur, vr
    # joint sign flip keeps u_k' S12 v_k unchanged
    for k in range(u.shape[1]):
        if u[np.argmax(np.abs(u[:, k])), k] < 0:
            u[:, k] *= -1
            v[:, k] *= -1
    scores = np.einsum("ik,ij,jk->k", u, s, v)
    order = np.argsort(-scores, kind="stable")
    return u[:, order], v[:, order]


def solve(
    s12,
    omega1,
    omega2,
    config: PenaltyConfig,
    init: SolverState | None = None,
    factor: ThetaFactor | None = None,
    callback: Callable[[SolverState], None] | None = None,
) -> CoupledPatterns:
    """Run ADMM to the stopping rule and return the post-processed patterns.

    Parameters
    ----------
    s12 : ndarray or CrossCovMatrix
        ``p1 x p2`` cross-covariance.
    omega1, omega2 : ndarray
        Roughness matrices of the two fields.
    config : PenaltyConfig
    init : SolverState, optional
        Warm start. Defaults to the leading singular vectors of ``s12``.
    factor : ThetaFactor, optional
        Pre-computed factorization matching ``config``'s smoothness values.
    callback : callable, optional
        Called with the state after every iteration.

    Convergence is declared when ``max(|G_new - G|, |G - R|, |G - Q|) /
    sqrt(p1 p2) <= tol`` (Frobenius norms).
    """
    s = _s12_array(s12)
    p1, p2 = s.shape
    k = config.rank_k
    if k > min(p1, p2):
        raise InvalidConfigError(f"rank {k} exceeds min(p1, p2) = {min(p1, p2)}")
    if factor is None:
        factor = resolve_factor(s, omega1, omega2, config)
    elif factor.p != p1 + p2:
        raise DimensionMismatchError("factor does not match S12 dimensions")
    zeta = factor.zeta

    state = initial_state(s, k) if init is None else init.copy()
    state.iter = 0
    if state.g.shape != (p1 + p2, k):
        raise DimensionMismatchError(f"warm start has shape {state.g.shape}, need {(p1 + p2, k)}")

    thr = _row_thresholds(p1, p1 + p2, config.tau2u, config.tau2v)
    scale = 1.0 / math.sqrt(p1 * p2)
    cho = factor.cho
    g, r, q, gr, gq = state.g, state.r, state.q, state.gamma_r, state.gamma_q
    converged = False
    res = state.residuals
    for it in range(1, config.max_iter + 1):
        g_new = 0.5 * cho_solve(cho, zeta * (r + q) - gr - gq, check_finite=False)
        a = zeta * g_new + gr
        r = np.sign(a) * np.maximum(np.abs(a) - thr, 0.0) / zeta
        m = zeta * g_new + gq
        q = np.vstack([polar_factor(m[:p1]), polar_factor(m[p1:])])
        dr = g_new - r
        dq = g_new - q
        gr = gr + zeta * dr
        gq = gq + zeta * dq
        res = (scale * np.linalg.norm(dr), scale * np.linalg.norm(dq),
               scale * np.linalg.norm(g_new - g))
        g = g_new
        if callback is not None:
            callback(SolverState(g, r, q, gr, gq, p1, it, res))
        if max(res) <= config.tol:
            converged = True
            break

    final = SolverState(g, r, q, gr, gq, p1, it, res)
    u, v = _finalize(q, r, p1, s)
    return CoupledPatterns(u, v, converged, it, zeta, res, final)
