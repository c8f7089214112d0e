import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import principal_angles, random_problem
from spatmca.admm import (
    DegenerateProjectionWarning,
    PenaltyConfig,
    SolverState,
    auto_zeta,
    build_theta,
    factorize,
    initial_state,
    polar_factor,
    resolve_factor,
    soft_threshold,
    solve,
    update_g,
    update_multipliers,
    update_q,
    update_r,
)
from spatmca.exceptions import DimensionMismatchError, InvalidConfigError, ZetaTooSmallError


def test_soft_threshold_examples():
    np.testing.assert_array_equal(soft_threshold(np.array([3.0, -0.5, -2.0]), 1.0), [2.0, 0.0, -1.0])
    np.testing.assert_array_equal(soft_threshold(np.array([1.0, -1.0]), 1.0), [0.0, 0.0])
    x = np.array([0.3, -7.0])
    np.testing.assert_array_equal(soft_threshold(x, 0.0), x)


@given(st.floats(-100, 100), st.floats(0, 50))
def test_soft_threshold_is_prox(x, t):
    # prox of t|.|: minimises 0.5 (z - x)^2 + t |z|; check against nearby candidates
    z = float(soft_threshold(np.array([x]), t)[0])
    f = lambda c: 0.5 * (c - x) ** 2 + t * abs(c)
    for c in (z - 1e-3, z + 1e-3, 0.0, x):
        assert f(z) <= f(c) + 1e-9


def test_polar_factor_column_vector_is_normalised():
    m = np.array([[3.0], [4.0]])
    np.testing.assert_allclose(polar_factor(m), [[0.6], [0.8]])


def test_polar_factor_3x1_brute_force_sphere():
    m = np.array([[1.0], [-2.0], [0.5]])
    q = polar_factor(m)
    th = np.linspace(0, np.pi, 361)
    ph = np.linspace(0, 2 * np.pi, 721)
    T, P = np.meshgrid(th, ph)
    pts = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
    best = pts[np.argmax(pts @ m[:, 0])]
    assert float(q[:, 0] @ m[:, 0]) >= float(best @ m[:, 0]) - 1e-12
    assert np.linalg.norm(q[:, 0] - best) < 1e-2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8), st.integers(1, 3))
def test_polar_factor_orthonormal_and_optimal(seed, p, k):
    k = min(k, p)
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((p, k))
    q = polar_factor(m)
    np.testing.assert_allclose(q.T @ q, np.eye(k), atol=1e-10)
    # maximises tr(Q' M) among matrices with orthonormal columns
    for _ in range(20):
        z, _ = np.linalg.qr(rng.standard_normal((p, k)))
        assert np.trace(q.T @ m) >= np.trace(z.T @ m) - 1e-10


def test_polar_factor_degenerate_warns():
    with pytest.warns(DegenerateProjectionWarning):
        q = polar_factor(np.zeros((4, 1)))
    assert np.linalg.norm(q) == pytest.approx(1.0)
    with pytest.warns(DegenerateProjectionWarning):
        polar_factor(np.array([[1.0, 1.0], [1.0, 1.0], [0.0, 0.0]]))


def test_build_theta_blocks(problem):
    s12, _, _, om1, om2 = problem
    th = build_theta(s12, om1, om2, 0.3, 0.7)
    p1 = s12.shape[0]
    np.testing.assert_allclose(th, th.T, atol=1e-12)
    np.testing.assert_allclose(th[:p1, :p1], -0.3 * om1)
    np.testing.assert_allclose(th[p1:, p1:], -0.7 * om2)
    np.testing.assert_allclose(th[:p1, p1:], 0.5 * s12)


def test_build_theta_shape_check(problem):
    s12, _, _, om1, om2 = problem
    with pytest.raises(DimensionMismatchError):
        build_theta(s12, om2, om1, 0.1, 0.1)


def test_factorize_rejects_small_zeta(problem):
    s12, _, _, om1, om2 = problem
    th = build_theta(s12, om1, om2, 0.0, 0.0)
    with pytest.raises(ZetaTooSmallError):
        factorize(th, 1e-6)
    lam = np.linalg.eigvalsh(th).max()
    assert lam <= 0.5 * np.linalg.norm(s12, 2) + 1e-12
    factorize(th, 2 * lam)


def test_auto_zeta_and_explicit_zeta(problem):
    s12, _, _, om1, om2 = problem
    f = resolve_factor(s12, om1, om2, PenaltyConfig(tau1u=1, tau1v=1))
    assert f.zeta == pytest.approx(auto_zeta(s12))
    assert auto_zeta(s12) == pytest.approx(10 * np.linalg.svd(s12, compute_uv=False)[0])
    f = resolve_factor(s12, om1, om2, PenaltyConfig(zeta=3.0))
    assert f.zeta == 3.0
    with pytest.raises(ZetaTooSmallError):
        resolve_factor(s12, om1, om2, PenaltyConfig(zeta=1e-8))


def test_auto_zeta_zero_cross_cov():
    from spatmca.tps import LocationSet, roughness_matrix

    om = roughness_matrix(LocationSet(np.linspace(0, 1, 5)))
    f = resolve_factor(np.zeros((5, 5)), om, om, PenaltyConfig())
    assert f.zeta > 0


@pytest.mark.parametrize(
    "kw",
    [dict(tau1u=-1.0), dict(rank_k=0), dict(zeta=-2.0), dict(tol=0.0), dict(max_iter=0),
     dict(tau2v=float("nan"))],
)
def test_penalty_config_validation(kw):
    with pytest.raises(InvalidConfigError):
        PenaltyConfig(**kw)


def test_rank_too_large(problem):
    s12, _, _, om1, om2 = problem
    with pytest.raises(InvalidConfigError):
        solve(s12, om1, om2, PenaltyConfig(rank_k=20))


def test_update_g_matches_dense_solve(problem):
    s12, _, _, om1, om2 = problem
    th = build_theta(s12, om1, om2, 0.2, 0.1)
    rng = np.random.default_rng(0)
    p = th.shape[0]
    st_ = SolverState(*(rng.standard_normal((p, 2)) for _ in range(5)), p1=s12.shape[0])
    zeta = auto_zeta(s12)
    g = update_g(st_, th, zeta)
    rhs = zeta * (st_.r + st_.q) - st_.gamma_r - st_.gamma_q
    np.testing.assert_allclose(g, 0.5 * np.linalg.solve(zeta * np.eye(p) - th, rhs), rtol=1e-9)


def test_step_functions_shapes_and_constraints(problem):
    s12, _, _, om1, om2 = problem
    p1 = s12.shape[0]
    st_ = initial_state(s12, 2)
    rng = np.random.default_rng(1)
    st_.g = st_.g + 0.1 * rng.standard_normal(st_.g.shape)
    r = update_r(st_, 5.0, 0.3, 0.0)
    direct = soft_threshold(5.0 * st_.g + st_.gamma_r, 0.3) / 5.0
    np.testing.assert_allclose(r[:p1], direct[:p1])
    np.testing.assert_allclose(r[p1:], st_.g[p1:])
    q = update_q(st_, 5.0)
    np.testing.assert_allclose(q[:p1].T @ q[:p1], np.eye(2), atol=1e-12)
    np.testing.assert_allclose(q[p1:].T @ q[p1:], np.eye(2), atol=1e-12)
    st_.r, st_.q = r, q
    gr, gq = update_multipliers(st_, 5.0)
    np.testing.assert_allclose(gr, 5.0 * (st_.g - r))
    np.testing.assert_allclose(gq, 5.0 * (st_.g - q))


def test_initial_state_is_svd(problem):
    s12 = problem[0]
    st_ = initial_state(s12, 2)
    u, s, vt = np.linalg.svd(s12)
    np.testing.assert_allclose(np.abs(st_.g[: s12.shape[0]]), np.abs(u[:, :2]))
    np.testing.assert_array_equal(st_.gamma_r, 0)
    np.testing.assert_array_equal(st_.g, st_.q)


def test_unpenalised_reduces_to_svd(problem):
    s12, _, _, om1, om2 = problem
    out = solve(s12, om1, om2, PenaltyConfig(rank_k=3))
    assert out.converged
    u, s, vt = np.linalg.svd(s12)
    assert principal_angles(out.u_hat, u[:, :3]) <= 1e-3
    assert principal_angles(out.v_hat, vt[:3].T) <= 1e-3
    d = np.einsum("ik,ij,jk->k", out.u_hat, s12, out.v_hat)
    np.testing.assert_allclose(d, s[:3], rtol=1e-3)


def test_random_start_finds_same_subspace(problem):
    # with no penalty the objective only sees the span, so compare subspaces
    s12, _, _, om1, om2 = problem
    rng = np.random.default_rng(9)
    p1, p2 = s12.shape
    g = np.vstack([np.linalg.qr(rng.standard_normal((p1, 2)))[0],
                   np.linalg.qr(rng.standard_normal((p2, 2)))[0]])
    z = np.zeros_like(g)
    init = SolverState(g, g.copy(), g.copy(), z, z.copy(), p1)
    out = solve(s12, om1, om2, PenaltyConfig(rank_k=2, tol=1e-9, max_iter=50000), init=init)
    u, _, vt = np.linalg.svd(s12)
    assert principal_angles(out.u_hat, u[:, :2]) <= 1e-4
    assert principal_angles(out.v_hat, vt[:2].T) <= 1e-4


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 10_000),
       st.sampled_from([0.0, 0.01, 0.5]), st.sampled_from([0.0, 0.005, 0.05]),
       st.sampled_from([0.0, 0.1]), st.sampled_from([0.0, 0.02]), st.integers(1, 3))
def test_output_invariants(seed, t1u, t2u, t1v, t2v, k):
    s12, _, _, om1, om2 = random_problem(seed, p1=9, p2=7, n=100)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateProjectionWarning)
        out = solve(s12, om1, om2, PenaltyConfig(t1u, t2u, t1v, t2v, rank_k=k))
    for m in (out.u_hat, out.v_hat):
        assert np.abs(m.T @ m - np.eye(k)).max() <= 1e-8
    d = np.einsum("ik,ij,jk->k", out.u_hat, s12, out.v_hat)
    assert np.all(np.diff(d) <= 1e-12)
    for j in range(k):
        assert out.u_hat[np.argmax(np.abs(out.u_hat[:, j])), j] > 0
    assert out.iterations <= 10000
    if out.converged:
        assert max(out.residuals) <= 1e-4


def test_sparsity_gives_exact_zeros(problem):
    s12, _, _, om1, om2 = problem
    out = solve(s12, om1, om2, PenaltyConfig(0.0, 0.1, 0.0, 0.1, rank_k=1))
    assert out.converged
    assert np.sum(out.u_hat == 0) > 0
    # zeros come from the lasso split
    np.testing.assert_array_equal(out.u_hat[:, 0] == 0, out.state.r[: s12.shape[0], 0] == 0)


def test_heavy_penalty_feasible(problem):
    s12, _, _, om1, om2 = problem
    out = solve(s12, om1, om2, PenaltyConfig(5.0, 0.02, 5.0, 0.02, rank_k=2))
    for m in (out.u_hat, out.v_hat):
        assert np.abs(m.T @ m - np.eye(2)).max() <= 1e-8


def test_smoothing_reduces_roughness(problem):
    s12, _, _, om1, om2 = problem
    a = solve(s12, om1, om2, PenaltyConfig(rank_k=1))
    b = solve(s12, om1, om2, PenaltyConfig(tau1u=1.0, tau1v=1.0, rank_k=1))
    rough = lambda o: o.u_hat[:, 0] @ om1 @ o.u_hat[:, 0]
    assert rough(b) < rough(a)


def test_field_swap_symmetry(problem):
    s12, _, _, om1, om2 = problem
    cfg = PenaltyConfig(0.2, 0.01, 0.05, 0.02, rank_k=2, tol=1e-8, max_iter=50000)
    a = solve(s12, om1, om2, cfg)
    b = solve(s12.T, om2, om1, PenaltyConfig(0.05, 0.02, 0.2, 0.01, rank_k=2, tol=1e-8,
                                             max_iter=50000))
    for j in range(2):
        sgn = np.sign(a.u_hat[:, j] @ b.v_hat[:, j])
        np.testing.assert_allclose(a.u_hat[:, j], sgn * b.v_hat[:, j], atol=1e-6)
        np.testing.assert_allclose(a.v_hat[:, j], sgn * b.u_hat[:, j], atol=1e-6)


def test_warm_start_agrees_with_cold(problem):
    s12, _, _, om1, om2 = problem
    base = PenaltyConfig(0.1, 0.01, 0.1, 0.01, rank_k=2, tol=1e-9, max_iter=100000)
    prev = solve(s12, om1, om2, base.with_taus(tau1u=0.05))
    warm = solve(s12, om1, om2, base, init=prev.state)
    cold = solve(s12, om1, om2, base)
    assert warm.converged and cold.converged
    assert principal_angles(warm.u_hat, cold.u_hat) <= 1e-6
    assert principal_angles(warm.v_hat, cold.v_hat) <= 1e-6


def test_warm_start_shape_checked(problem):
    s12, _, _, om1, om2 = problem
    with pytest.raises(DimensionMismatchError):
        solve(s12, om1, om2, PenaltyConfig(rank_k=2), init=initial_state(s12, 1))


def test_max_iter_reports_nonconvergence(problem):
    s12, _, _, om1, om2 = problem
    out = solve(s12, om1, om2, PenaltyConfig(0.5, 0.05, 0.5, 0.05, rank_k=2, max_iter=2,
                                             tol=1e-12))
    assert not out.converged and out.iterations == 2


def test_callback_called_each_iteration(problem):
    s12, _, _, om1, om2 = problem
    seen = []
    out = solve(s12, om1, om2, PenaltyConfig(0.1, 0.01, 0.1, 0.01),
                callback=lambda s: seen.append(s.iter))
    assert seen == list(range(1, out.iterations + 1))


def test_deterministic(problem):
    s12, _, _, om1, om2 = problem
    cfg = PenaltyConfig(0.1, 0.01, 0.1, 0.01, rank_k=2)
    a, b = solve(s12, om1, om2, cfg), solve(s12, om1, om2, cfg)
    np.testing.assert_array_equal(a.u_hat, b.u_hat)
    np.testing.assert_array_equal(a.v_hat, b.v_hat)
