"""M-fold cross-validation, two-step tuning and rank selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .admm import PenaltyConfig, resolve_factor, solve
from .crosscov import PairedSample, cross_cov
from .exceptions import InvalidConfigError, InvalidFoldError
from .model import estimate_d, low_rank

log = logging.getLogger(__name__)


def log_grid(lower, upper, num, include_zero=True):
    """``num`` log-spaced values in ``[lower, upper]``, optionally preceded by 0."""
    vals = list(np.logspace(np.log10(lower), np.log10(upper), num)) if num else []
    return tuple([0.0] + vals if include_zero else vals)


def _check_grid(name, grid):
    grid = tuple(float(x) for x in grid)
    if not grid or 0.0 not in grid:
        raise InvalidConfigError(f"{name} must contain 0")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidConfigError(f"{name} must be strictly increasing")
    if grid[0] < 0:
        raise InvalidConfigError(f"{name} must be nonnegative")
    return grid


@dataclass(frozen=True)
class CVConfig:
    """Cross-validation settings.

    Default grids: smoothness ``{0}`` plus 20 log-spaced values in
    ``[1e-2, 10]``; sparseness ``{0}`` plus 10 log-spaced values in
    ``[1e-3, 1]``; five folds.
    """

    m_folds: int = 5
    tau1_grid_u: tuple = log_grid(1e-2, 10, 20)
    tau1_grid_v: tuple = log_grid(1e-2, 10, 20)
    tau2_grid_u: tuple = log_grid(1e-3, 1, 10)
    tau2_grid_v: tuple = log_grid(1e-3, 1, 10)
    k_max: int = 5
    seed: int = 0
    tol: float = 1e-4
    max_iter: int = 10000
    zeta: object = "auto"
    warm_start: bool = True

    def __post_init__(self):
        if self.m_folds < 2:
            raise InvalidConfigError("m_folds must be at least 2")
        if self.k_max < 1:
            raise InvalidConfigError("k_max must be at least 1")
        for name in ("tau1_grid_u", "tau1_grid_v", "tau2_grid_u", "tau2_grid_v"):
            object.__setattr__(self, name, _check_grid(name, getattr(self, name)))

    @classmethod
    def with_grid_sizes(cls, n_tau1=21, n_tau2=11, tau1_range=(1e-2, 10.0),
                        tau2_range=(1e-3, 1.0), **kw):
        """Grids of ``n_tau1``/``n_tau2`` points in total, zero included."""
        g1 = log_grid(*tau1_range, n_tau1 - 1)
        g2 = log_grid(*tau2_range, n_tau2 - 1)
        return cls(tau1_grid_u=g1, tau1_grid_v=g1, tau2_grid_u=g2, tau2_grid_v=g2, **kw)

    def restricted(self, smooth=True, sparse=True):
        """Copy with the smoothness and/or sparseness grids collapsed to ``(0,)``."""
        upd = {}
        if not smooth:
            upd.update(tau1_grid_u=(0.0,), tau1_grid_v=(0.0,))
        if not sparse:
            upd.update(tau2_grid_u=(0.0,), tau2_grid_v=(0.0,))
        return replace(self, **upd)


@dataclass
class CVResult:
    """Outcome of rank selection.

    ``scores`` maps ``(K, tau1u, tau2u, tau1v, tau2v)`` to the mean CV
    score for every candidate evaluated.  ``per_rank`` maps each scanned
    ``K`` to its selected tuple and score.
    """

    scores: dict
    selected: tuple
    k_selected: int
    k_converged: bool
    per_rank: dict = field(default_factory=dict)

    @property
    def taus(self):
        return self.selected[1:]

    def penalty_config(self, **kw):
        k, t1u, t2u, t1v, t2v = self.selected
        return PenaltyConfig(tau1u=t1u, tau2u=t2u, tau1v=t1v, tau2v=t2v, rank_k=k, **kw)


def make_folds(n, m, seed=0):
    """Random partition of ``range(n)`` into ``m`` folds whose sizes differ by at most 1."""
    if m < 2:
        raise InvalidConfigError("need at least 2 folds")
    if m > n:
        raise InvalidConfigError(f"cannot split {n} rows into {m} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, m)]


def _check_folds(folds, n):
    for i, f in enumerate(folds):
        if len(f) < 1:
            raise InvalidFoldError(f"fold {i} is empty")
        if len(f) >= n:
            raise InvalidFoldError(f"fold {i} leaves no training rows")


class CVEvaluator:
    """CV scores on fixed folds, with per-fold factorization caching and memoization.

    Parameters
    ----------
    sample : PairedSample
    folds : list of index arrays
    omega1, omega2 : ndarray
        Roughness matrices.
    tol, max_iter, zeta :
        Solver controls; ``zeta="auto"`` is resolved per training fold.
    warm_start : bool
        Within a sweep lane, start each solve from the previous candidate's
        final iterate (per fold). Cold starts use the leading singular
        vectors of the training cross-covariance.
    """

    def __init__(self, sample: PairedSample, folds, omega1, omega2, tol=1e-4,
                 max_iter=10000, zeta="auto", warm_start=True):
        _check_folds(folds, sample.n)
        self.sample = sample
        self.folds = [np.asarray(f) for f in folds]
        self.omega1 = omega1
        self.omega2 = omega2
        self.tol = tol
        self.max_iter = max_iter
        self.zeta = zeta
        self.warm_start = warm_start
        self.scores: dict = {}
        self.n_solves = 0
        self._factors: dict = {}
        self._lane: dict = {}
        n = sample.n
        self._train_s12 = []
        self._valid_s12 = []
        for f in self.folds:
            train = np.setdiff1d(np.arange(n), f)
            self._train_s12.append(cross_cov(sample.y1[train], sample.y2[train]))
            self._valid_s12.append(cross_cov(sample.y1[f], sample.y2[f]))

    @classmethod
    def from_config(cls, sample, cvcfg: CVConfig, omega1, omega2):
        folds = make_folds(sample.n, cvcfg.m_folds, cvcfg.seed)
        return cls(sample, folds, omega1, omega2, tol=cvcfg.tol, max_iter=cvcfg.max_iter,
                   zeta=cvcfg.zeta, warm_start=cvcfg.warm_start)

    def _config(self, k, taus):
        t1u, t2u, t1v, t2v = taus
        return PenaltyConfig(tau1u=t1u, tau2u=t2u, tau1v=t1v, tau2v=t2v, rank_k=k,
                             zeta=self.zeta, tol=self.tol, max_iter=self.max_iter)

    def _factor(self, m, cfg):
        key = (m, cfg.tau1u, cfg.tau1v)
        fac = self._factors.get(key)
        if fac is None:
            fac = resolve_factor(self._train_s12[m], self.omega1, self.omega2, cfg)
            self._factors[key] = fac
        return fac

    def reset_lane(self):
        """Start a new warm-start chain."""
        self._lane.clear()

    def score(self, k, tau1u, tau2u, tau1v, tau2v):
        """Mean over folds of ``|S12_valid - U D V'|_F^2`` (memoized)."""
        taus = (float(tau1u), float(tau2u), float(tau1v), float(tau2v))
        key = (int(k),) + taus
        if key in self.scores:
            return self.scores[key]
        cfg = self._config(k, taus)
        total = 0.0
        for m in range(len(self.folds)):
            s_train = self._train_s12[m]
            init = self._lane.get((m, k)) if self.warm_start else None
            pat = solve(s_train, self.omega1, self.omega2, cfg, init=init,
                        factor=self._factor(m, cfg))
            self.n_solves += 1
            if self.warm_start:
                self._lane[(m, k)] = pat.state
            d = estimate_d(pat, s_train)
            resid = self._valid_s12[m] - low_rank(pat.u_hat, d, pat.v_hat)
            total += float(np.sum(resid * resid))
        score = total / len(self.folds)
        self.scores[key] = score
        return score

    def grid_search(self, k, grid_a, grid_b, make_taus):
        """Exhaustive argmin over ``grid_a x grid_b``; ties go to the earliest
        (smallest) values. Each ``grid_a`` row is one warm-start lane."""
        best, best_score = None, np.inf
        for a in grid_a:
            self.reset_lane()
            for b in grid_b:
                sc = self.score(k, *make_taus(a, b))
                if sc < best_score:
                    best, best_score = (a, b), sc
        self.reset_lane()
        return best, best_score


def cv_score(sample, folds, K, tau1u, tau2u, tau1v, tau2v, omega1, omega2, tol=1e-4,
             max_iter=10000, zeta="auto"):
    """Cross-validation score of one candidate (cold-started solves)."""
    ev = CVEvaluator(sample, folds, omega1, omega2, tol=tol, max_iter=max_iter, zeta=zeta,
                     warm_start=False)
    return ev.score(K, tau1u, tau2u, tau1v, tau2v)


def _evaluator(sample, cvcfg, omega1, omega2, evaluator):
    if evaluator is not None:
        return evaluator
    if omega1 is None or omega2 is None:
        from .tps import roughness_matrix

        omega1 = roughness_matrix(sample.locs1) if omega1 is None else omega1
        omega2 = roughness_matrix(sample.locs2) if omega2 is None else omega2
    return CVEvaluator.from_config(sample, cvcfg, omega1, omega2)


def select_tau1(sample, cvcfg: CVConfig, K, omega1=None, omega2=None, evaluator=None):
    """Smoothness parameters minimizing CV with sparseness switched off."""
    ev = _evaluator(sample, cvcfg, omega1, omega2, evaluator)
    (t1u, t1v), _ = ev.grid_search(K, cvcfg.tau1_grid_u, cvcfg.tau1_grid_v,
                                   lambda a, b: (a, 0.0, b, 0.0))
    return t1u, t1v


def select_tau2(sample, cvcfg: CVConfig, K, tau1u_hat, tau1v_hat, omega1=None, omega2=None,
                evaluator=None):
    """Sparseness parameters minimizing CV with the smoothness values held fixed."""
    ev = _evaluator(sample, cvcfg, omega1, omega2, evaluator)
    (t2u, t2v), _ = ev.grid_search(K, cvcfg.tau2_grid_u, cvcfg.tau2_grid_v,
                                   lambda a, b: (tau1u_hat, a, tau1v_hat, b))
    return t2u, t2v


def first_non_decrease(score_of: Callable[[int], float], k_max: int):
    """Smallest ``K`` with ``score(K) <= score(K + 1)``, evaluated lazily.

    Returns ``(K, converged, scores)``; when the scores keep decreasing up
    to ``k_max``, returns ``(k_max, False, scores)``.
    """
    scores = {1: score_of(1)}
    for k in range(1, k_max):
        scores[k + 1] = score_of(k + 1)
        if scores[k] <= scores[k + 1]:
            return k, True, scores
    return k_max, False, scores


def select_rank(sample, cvcfg: CVConfig, omega1=None, omega2=None, evaluator=None) -> CVResult:
    """Two-step tuning for ``K = 1, 2, ...`` until CV stops decreasing."""
    ev = _evaluator(sample, cvcfg, omega1, omega2, evaluator)
    p1, p2 = sample.y1.shape[1], sample.y2.shape[1]
    k_max = min(cvcfg.k_max, p1, p2)
    per_rank = {}

    def score_of(k):
        t1u, t1v = select_tau1(sample, cvcfg, k, evaluator=ev)
        t2u, t2v = select_tau2(sample, cvcfg, k, t1u, t1v, evaluator=ev)
        sc = ev.score(k, t1u, t2u, t1v, t2v)
        per_rank[k] = ((k, t1u, t2u, t1v, t2v), sc)
        log.debug("K=%d taus=%s cv=%.6g", k, (t1u, t2u, t1v, t2v), sc)
        return sc

    k_hat, converged, _ = first_non_decrease(score_of, k_max)
    return CVResult(dict(ev.scores), per_rank[k_hat][0], k_hat, converged, per_rank)


def tune_fixed_rank(sample, cvcfg: CVConfig, K, omega1=None, omega2=None, evaluator=None):
    """Two-step tuning at a fixed rank; returns a :class:`CVResult`."""
    ev = _evaluator(sample, cvcfg, omega1, omega2, evaluator)
    t1u, t1v = select_tau1(sample, cvcfg, K, evaluator=ev)
    t2u, t2v = select_tau2(sample, cvcfg, K, t1u, t1v, evaluator=ev)
    sel = (K, t1u, t2u, t1v, t2v)
    return CVResult(dict(ev.scores), sel, K, True, {K: (sel, ev.score(*sel))})
