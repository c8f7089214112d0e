"""Synthetic coupled fields and the four-method comparison."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .admm import solve
from .crosscov import PairedSample, cross_cov
from .exceptions import DimensionMismatchError, InvalidConfigError
from .model import estimate_d, low_rank
from .tps import LocationSet, roughness_matrix
from .tuning import CVConfig, CVEvaluator, make_folds, select_rank, tune_fixed_rank

log = logging.getLogger(__name__)

METHODS = ("mca", "smooth_only", "sparse_only", "spatmca")


@dataclass(frozen=True)
class SimConfig:
    """Simulation design. ``p1``/``p2`` are total site counts; for ``d=2``
    they must be perfect squares (regular grids)."""

    d: int = 1
    n: int = 1000
    p1: int = 50
    p2: int = 50
    bounds1: tuple = (-7.0, 7.0)
    bounds2: tuple = (-7.0, 7.0)
    d1: float = 1.0
    d2: float = 0.0
    noise_sd1: float = 1.0
    noise_sd2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.d not in (1, 2):
            raise InvalidConfigError("simulation supports d = 1 or 2")
        for p in (self.p1, self.p2):
            side = round(p ** (1.0 / self.d))
            if side ** self.d != p:
                raise InvalidConfigError(f"{p} sites do not form a regular {self.d}-D grid")
        if not (self.d1 >= self.d2 >= 0):
            raise InvalidConfigError("need d1 >= d2 >= 0")
        if self.noise_sd1 < 0 or self.noise_sd2 < 0:
            raise InvalidConfigError("noise standard deviations must be nonnegative")
        if self.n < 2:
            raise InvalidConfigError("n must be at least 2")

    def locations(self):
        side1 = round(self.p1 ** (1.0 / self.d))
        side2 = round(self.p2 ** (1.0 / self.d))
        return (LocationSet.grid(*self.bounds1, side1, self.d),
                LocationSet.grid(*self.bounds2, side2, self.d))

    @classmethod
    def full_1d(cls, **kw):
        return cls(**{**dict(d=1, n=1000, p1=50, p2=50), **kw})

    @classmethod
    def full_2d(cls, **kw):
        return cls(**{**dict(d=2, n=5000, p1=25 ** 2, p2=20 ** 2, bounds1=(-5.0, 5.0),
                             bounds2=(-7.0, 7.0)), **kw})


@dataclass(frozen=True, eq=False)
class TruePatterns:
    u1: np.ndarray
    v1: np.ndarray
    u2: np.ndarray
    v2: np.ndarray
    c: tuple

    @property
    def u(self):
        return np.column_stack([self.u1, self.u2])

    @property
    def v(self):
        return np.column_stack([self.v1, self.v2])


def _normalize(x):
    c = float(np.linalg.norm(x))
    return x / c, c


def true_patterns(cfg: SimConfig) -> TruePatterns:
    """Gaussian bumps (first pair) and their product-weighted versions (second pair),
    normalized to unit length over the site grids."""
    locs1, locs2 = cfg.locations()
    x1, x2 = locs1.sites, locs2.sites - 2.0
    u1, c1 = _normalize(np.exp(-np.sum(x1 ** 2, axis=1)))
    v1, c2 = _normalize(np.exp(-np.sum(x2 ** 2, axis=1) / 2.0))
    u2, c3 = _normalize(np.prod(x1, axis=1) * np.exp(-np.sum(x1 ** 2, axis=1)))
    v2, c4 = _normalize(np.prod(x2, axis=1) * np.exp(-np.sum(x2 ** 2, axis=1) / 2.0))
    return TruePatterns(u1, v1, u2, v2, (c1, c2, c3, c4))


def true_cross_cov(cfg: SimConfig, patterns: TruePatterns | None = None):
    tp = true_patterns(cfg) if patterns is None else patterns
    return low_rank(tp.u, np.array([cfg.d1, cfg.d2]), tp.v)


def _psd_sqrt(cov, tol=1e-10):
    w, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    if w.min() < -tol * max(1.0, abs(w).max()):
        raise InvalidConfigError(
            "joint covariance is indefinite; the leading singular value must not exceed 1"
        )
    return (vecs * np.sqrt(np.clip(w, 0.0, None))) @ vecs.T


def generate_sample(cfg: SimConfig, seed=None) -> PairedSample:
    """Draw ``n`` pairs with unit marginal covariances and cross-covariance
    ``U diag(d1, d2) V'``, plus independent Gaussian noise.

    ``eta2 ~ N(0, I)``; ``eta1 = C eta2 + N(0, I - C C')`` where ``C`` is the
    cross-covariance. Eigenvalues of ``I - C C'`` that are negative only by
    rounding (``d1 = 1``) are clipped to zero.
    """
    if cfg.d1 > 1.0 + 1e-12:
        raise InvalidConfigError("d1 > 1 makes the joint covariance indefinite")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    locs1, locs2 = cfg.locations()
    c = true_cross_cov(cfg)
    p1, p2 = c.shape
    cond_sqrt = _psd_sqrt(np.eye(p1) - c @ c.T)
    eta2 = rng.standard_normal((cfg.n, p2))
    eta1 = eta2 @ c.T + rng.standard_normal((cfg.n, p1)) @ cond_sqrt
    y1 = eta1 + cfg.noise_sd1 * rng.standard_normal((cfg.n, p1))
    y2 = eta2 + cfg.noise_sd2 * rng.standard_normal((cfg.n, p2))
    return PairedSample(y1, y2, locs1, locs2)


def loss(c_hat, c_true) -> float:
    """Mean squared error over all site pairs."""
    c_hat = np.asarray(c_hat, dtype=float)
    c_true = np.asarray(c_true, dtype=float)
    if c_hat.shape != c_true.shape:
        raise DimensionMismatchError(f"shape mismatch: {c_hat.shape} vs {c_true.shape}")
    return float(np.mean((c_hat - c_true) ** 2))


def method_cv_config(method, cvcfg: CVConfig) -> CVConfig:
    if method == "mca":
        return cvcfg.restricted(smooth=False, sparse=False)
    if method == "smooth_only":
        return cvcfg.restricted(sparse=False)
    if method == "sparse_only":
        return cvcfg.restricted(smooth=False)
    if method == "spatmca":
        return cvcfg
    raise InvalidConfigError(f"unknown method {method!r}; expected one of {METHODS}")


def _parse_policy(policy):
    if policy == "cv":
        return None
    if isinstance(policy, int):
        return policy
    if isinstance(policy, str) and policy.startswith("fixed:"):
        return int(policy.split(":", 1)[1])
    raise InvalidConfigError(f"K policy must be 'cv', an int or 'fixed:K', got {policy!r}")


def _policy_label(policy):
    k = _parse_policy(policy)
    return "cv" if k is None else f"fixed:{k}"


def run_replicate(cfg: SimConfig, methods, cvcfg: CVConfig, k_policies=("fixed:1",),
                  replicate=0, omegas=None):
    """One replicate: generate, tune each method on shared folds, score the loss."""
    seed = cfg.seed + replicate
    sample = generate_sample(cfg, seed=seed)
    om1, om2 = omegas if omegas is not None else (roughness_matrix(sample.locs1),
                                                  roughness_matrix(sample.locs2))
    c_true = true_cross_cov(cfg)
    s12 = cross_cov(sample.y1, sample.y2)
    fold_cfg = replace(cvcfg, seed=cvcfg.seed + replicate)
    ev = CVEvaluator.from_config(sample, fold_cfg, om1, om2)
    rows = []
    for policy in k_policies:
        k_fixed = _parse_policy(policy)
        for method in methods:
            mcfg = method_cv_config(method, fold_cfg)
            if k_fixed is None:
                res = select_rank(sample, mcfg, evaluator=ev)
            else:
                res = tune_fixed_rank(sample, mcfg, k_fixed, evaluator=ev)
            pcfg = res.penalty_config(zeta=cvcfg.zeta, tol=cvcfg.tol, max_iter=cvcfg.max_iter)
            pat = solve(s12, om1, om2, pcfg)
            d_hat = estimate_d(pat, s12)
            c_hat = low_rank(pat.u_hat, d_hat, pat.v_hat)
            k, t1u, t2u, t1v, t2v = res.selected
            rows.append(dict(
                method=method, k_policy=_policy_label(policy), replicate=replicate, seed=seed,
                k=k, tau1u=t1u, tau2u=t2u, tau1v=t1v, tau2v=t2v,
                cv_score=res.per_rank[k][1], loss=loss(c_hat, c_true),
                converged=pat.converged, iterations=pat.iterations,
            ))
    log.info("replicate %d done (%d solves)", replicate, ev.n_solves)
    return rows


def run_comparison(cfg: SimConfig, methods=METHODS, replicates=1, cvcfg: CVConfig | None = None,
                   k_policies=("fixed:1",), progress=None):
    """Loss table over replicates; replicate ``r`` uses seed ``cfg.seed + r``.

    Returns a list of row dicts keyed by method, K policy and replicate.
    """
    methods = tuple(methods)
    for m in methods:
        method_cv_config(m, CVConfig())
    if replicates < 1:
        raise InvalidConfigError("replicates must be at least 1")
    cvcfg = CVConfig() if cvcfg is None else cvcfg
    locs1, locs2 = cfg.locations()
    omegas = (roughness_matrix(locs1), roughness_matrix(locs2))
    rows = []
    for r in range(replicates):
        rows.extend(run_replicate(cfg, methods, cvcfg, k_policies, r, omegas))
        if progress is not None:
            progress(r)
    return rows
