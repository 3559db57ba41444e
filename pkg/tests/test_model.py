import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import cov_standard_errors, dense_factor_posterior, dense_mniw, max_z
from projmc2.linalg import RankDeficiencyError, adjoint_mismatch
from projmc2.model import (Dataset, FactorPrior, FactorSystem, MatrixNormalPrior,
                           MNIWCondParams, ModelState, PriorSpec, UnidentifiedError,
                           build_factor_system, conditional_mniw_full_sigma_oracle,
                           conditional_mniw_params, project_g, sample_F, sample_gamma,
                           sample_sigma2)
from projmc2.nngp import nngp_factors
from projmc2.spatial import Kernel, LocationSet


def random_upper(rng, k):
    r = np.triu(rng.standard_normal((k, k)))
    r[np.diag_indices(k)] = rng.uniform(0.5, 2.0, size=k)
    return r


def tiny_factor_problem(rng, n=4, phis=(6.0,), q=1, lam=None):
    coords = rng.uniform(size=(n, 2))
    locs = LocationSet(coords)
    x = np.column_stack([np.ones(n)])
    y = rng.standard_normal((n, q))
    data = Dataset(x, y, locs)
    factors = nngp_factors(locs, [Kernel(p) for p in phis], m=n - 1)
    K = len(phis)
    lam = rng.standard_normal((K, q)) if lam is None else np.asarray(lam, dtype=float)
    state = ModelState(np.array([[0.3] * q]), lam, rng.uniform(0.5, 1.5, size=q),
                       np.zeros((n, K)))
    return coords, data, factors, state


# ---------------------------------------------------------------- projection


def test_projection_properties(rng):
    f = rng.standard_normal((200, 2))
    g = project_g(f)
    assert np.max(np.abs(g.mean(axis=0))) < 1e-12
    assert np.max(np.abs(g.T @ g - 200 * np.eye(2))) < 1e-8


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([10, 200]), st.sampled_from([1, 2, 5]), st.integers(0, 2**31 - 1))
def test_projection_invariance(n, K, seed):
    r = np.random.default_rng(seed)
    ft = project_g(r.standard_normal((n, K)))
    mu = r.standard_normal(K) * 5
    moved = ft @ random_upper(r, K) + mu[None, :]
    assert np.max(np.abs(project_g(moved) - ft)) < 1e-10
    assert np.max(np.abs(project_g(ft) - ft)) < 1e-10
    assert np.max(np.abs(ft.T @ ft - n * np.eye(K))) < 1e-8


def test_projection_keeps_column_space(rng):
    f = rng.standard_normal((30, 3))
    g = project_g(f)
    fc = f - f.mean(axis=0)
    coef, *_ = np.linalg.lstsq(fc, g, rcond=None)
    assert np.allclose(fc @ coef, g, atol=1e-10)


def test_projection_rank_deficiency(rng):
    f = rng.standard_normal((20, 2))
    f[:, 1] = 3.0   # constant column vanishes after centering
    with pytest.raises(RankDeficiencyError):
        project_g(f)


# ------------------------------------------------------------ factor system


def test_factor_system_adjoint_and_normal_matrix(rng):
    locs = LocationSet(rng.uniform(size=(30, 2)))
    prior = FactorPrior(nngp_factors(locs, [Kernel(4.0), Kernel(9.0)], 5))
    op = FactorSystem(rng.standard_normal((2, 3)), rng.uniform(0.5, 2, size=3), prior)
    assert op.shape == (30 * 5, 30 * 2)
    assert adjoint_mismatch(op, rng, probes=10) < 1e-10
    dense = op.to_dense()
    assert np.allclose(dense.T @ dense, op.normal_matrix(), atol=1e-10)


def test_factor_posterior_mean_tiny(rng):
    coords, data, factors, state = tiny_factor_problem(rng)
    op, rhs = build_factor_system(state, data, factors)
    f = sample_F((op, rhs), rng, noise=np.zeros(op.nrows), atol=1e-14, btol=1e-14)
    lam, s2 = state.lambda_[0, 0], state.sigma2[0]
    c = Kernel(6.0).matrix(coords)
    resid = (data.y - data.x @ state.beta)[:, 0]
    closed = np.linalg.solve(np.linalg.inv(c) + lam ** 2 / s2 * np.eye(4), lam / s2 * resid)
    assert np.allclose(f[:, 0], closed, atol=1e-8)


def test_factor_posterior_mean_two_factors(rng):
    coords, data, factors, state = tiny_factor_problem(rng, n=6, phis=(3.0, 9.0), q=3)
    op, rhs = build_factor_system(state, data, factors)
    f = sample_F((op, rhs), rng, noise=np.zeros(op.nrows), atol=1e-14, btol=1e-14)
    mean, _ = dense_factor_posterior(coords, (3.0, 9.0), state.lambda_, state.sigma2,
                                     data.y - data.x @ state.beta)
    assert np.allclose(f.T.ravel(), mean, atol=1e-8)


def test_factor_system_shape_checks(rng):
    _, data, factors, state = tiny_factor_problem(rng)
    bad = state.copy()
    bad.sigma2 = np.array([-1.0])
    with pytest.raises(ValueError):
        build_factor_system(bad, data, factors)
    bad = state.copy()
    bad.lambda_ = np.ones((2, 1))
    with pytest.raises(ValueError):
        build_factor_system(bad, data, factors)


def test_factor_draws_match_prior_when_loadings_vanish(rng):
    coords, data, factors, state = tiny_factor_problem(rng, lam=[[0.0]])
    system = build_factor_system(state, data, factors)
    N = 20000
    draws = np.array([sample_F(system, rng)[:, 0] for _ in range(N)])
    target = factors[0].covariance()
    emp = np.cov(draws, rowvar=False)
    assert np.max(np.abs(emp - target) / cov_standard_errors(target, N)) < 3
    assert np.allclose(target, Kernel(6.0).matrix(coords), atol=1e-10)


def test_factor_draws_mean_tiny(rng):
    coords, data, factors, state = tiny_factor_problem(rng)
    system = build_factor_system(state, data, factors)
    N = 20000
    draws = np.array([sample_F(system, rng)[:, 0] for _ in range(N)])
    mean, cov = dense_factor_posterior(coords, (6.0,), state.lambda_, state.sigma2,
                                       data.y - data.x @ state.beta)
    assert max_z(draws.mean(axis=0), mean, np.sqrt(np.diag(cov) / N)) < 3


# --------------------------------------------------------- conjugate update


def mniw_instance(rng, n=12, q=2):
    coords = rng.uniform(size=(n, 2))
    x = np.ones((n, 1))
    f = rng.standard_normal((n, 1))
    y = 0.5 + f @ np.array([[1.0, -0.7]]) + 0.3 * rng.standard_normal((n, q))
    data = Dataset(x, y, LocationSet(coords))
    bp = (np.array([[0.2, -0.1]]), np.array([[2.0]]))
    lp = (np.array([[0.5, 0.5]]), np.array([[0.7]]))
    priors = PriorSpec(psi=[6.0], a=2.0, b=[1.0, 0.5],
                       beta_prior=MatrixNormalPrior(*bp), lambda_prior=MatrixNormalPrior(*lp))
    return data, f, priors, bp, lp


def test_conditional_params_match_dense(rng):
    data, f, priors, bp, lp = mniw_instance(rng)
    got = conditional_mniw_params(f, data, priors)
    ref = dense_mniw(data.x, data.y, f, bp, lp, a=2.0, b=0.0)
    ref_b = np.array([1.0, 0.5]) + 0.5 * np.diag(ref["s"])
    assert np.allclose(got.mu_star, ref["mu"], atol=1e-10)
    assert np.allclose(got.v_star, ref["v"], atol=1e-10)
    assert np.allclose(got.b_star, ref_b, atol=1e-10)
    assert got.a_star == 2.0 + 12 / 2


def test_flat_priors_reduce_to_ols(rng):
    data, f, _, _, _ = mniw_instance(rng)
    got = conditional_mniw_params(f, data, PriorSpec(psi=[6.0]))
    w = np.hstack([data.x, f])
    assert np.allclose(got.mu_star, np.linalg.lstsq(w, data.y, rcond=None)[0], atol=1e-10)


def test_zero_residual_leaves_b_unchanged(rng):
    n = 10
    x = np.column_stack([np.ones(n), rng.standard_normal(n)])
    f = rng.standard_normal((n, 1))
    y = x @ rng.standard_normal((2, 3)) + f @ rng.standard_normal((1, 3))
    data = Dataset(x, y, LocationSet(rng.uniform(size=(n, 2))))
    got = conditional_mniw_params(f, data, PriorSpec(psi=[6.0], b=[1.0, 2.0, 3.0]))
    assert np.allclose(got.b_star, [1.0, 2.0, 3.0], atol=1e-10)


def test_a_star_default_design():
    data_n = 2000
    assert PriorSpec(psi=[4.0], a=2.0).a + data_n / 2 == 1002


def test_full_sigma_oracle(rng):
    data, f, priors, bp, lp = mniw_instance(rng)
    psi, nu = np.eye(2), 5.0
    full = conditional_mniw_full_sigma_oracle(f, data, priors, psi, nu)
    diag = conditional_mniw_params(f, data, priors)
    ref = dense_mniw(data.x, data.y, f, bp, lp)
    assert np.allclose(full.mu_star, diag.mu_star, atol=1e-10)
    assert np.allclose(full.psi_star, psi + ref["s"], atol=1e-10)
    assert full.nu_star == nu + 12


def test_unidentified(rng):
    n = 8
    x = np.ones((n, 1))
    data = Dataset(x, rng.standard_normal((n, 2)), LocationSet(rng.uniform(size=(n, 2))))
    with pytest.raises(UnidentifiedError, match="unidentified regression/loadings"):
        conditional_mniw_params(np.ones((n, 1)), data, PriorSpec(psi=[6.0]))


def test_sigma2_inverse_gamma_means(rng):
    for a, b, N in ((1002.0, 500.5, 50000), (3.0, 2.0, 50000)):
        params = MNIWCondParams(np.zeros((1, 1)), np.eye(1), np.array([b]), a, 1)
        draws = np.array([sample_sigma2(params, rng)[0] for _ in range(N)])
        mean = b / (a - 1)
        sd = np.sqrt(b ** 2 / ((a - 1) ** 2 * (a - 2)))
        assert abs(draws.mean() - mean) < 3 * sd / np.sqrt(N)


def test_gamma_zero_noise_returns_mean(rng):
    mu = rng.standard_normal((3, 2))
    params = MNIWCondParams(mu, np.eye(3), np.ones(2), 3.0, 1)
    beta, lam = sample_gamma(params, np.ones(2), rng, noise=np.zeros((3, 2)))
    assert np.array_equal(np.vstack([beta, lam]), mu)
    assert beta.shape == (1, 2) and lam.shape == (2, 2)


def test_gamma_covariance(rng):
    mu = np.array([[1.0, -1.0], [0.5, 2.0]])
    vstar = np.array([[1.0, 0.4], [0.4, 0.5]])
    chol = np.linalg.cholesky(np.linalg.inv(vstar))
    params = MNIWCondParams(mu, chol, np.ones(2), 3.0, 1)
    sigma2 = np.array([0.5, 2.0])
    N = 50000
    draws = np.empty((N, 4))
    for t in range(N):
        beta, lam = sample_gamma(params, sigma2, rng)
        draws[t] = np.vstack([beta, lam]).T.ravel()   # vec, column stacked
    target = np.kron(np.diag(sigma2), vstar)
    assert max_z(draws.mean(axis=0), mu.T.ravel(), np.sqrt(np.diag(target) / N)) < 3
    emp = np.cov(draws, rowvar=False)
    assert np.max(np.abs(emp - target) / cov_standard_errors(target, N)) < 3


def test_gamma_standard_normal_case(rng):
    mu = np.array([[0.3, -0.2], [1.0, 0.0]])
    params = MNIWCondParams(mu, np.eye(2), np.ones(2), 3.0, 1)
    N = 20000
    draws = np.array([np.vstack(sample_gamma(params, np.ones(2), rng)).ravel() for _ in range(N)])
    z = draws - mu.ravel()
    assert np.max(np.abs(z.mean(axis=0))) < 3 / np.sqrt(N)
    assert np.max(np.abs(np.cov(z, rowvar=False) - np.eye(4))) < 3 * np.sqrt(2 / N)


# -------------------------------------------------------------- containers


def test_dataset_validation(rng):
    locs = LocationSet(rng.uniform(size=(5, 2)))
    with pytest.raises(ValueError):
        Dataset(np.ones((4, 1)), np.ones((5, 2)), locs)
    with pytest.raises(ValueError):
        Dataset(np.ones((5, 1)), np.full((5, 2), np.nan), locs)
    d = Dataset(np.column_stack([rng.standard_normal(5), np.ones(5)]), np.ones((5, 2)), locs)
    assert d.intercept_index == 1


def test_prior_validation():
    with pytest.raises(ValueError):
        MatrixNormalPrior(np.zeros((2, 1)), -np.eye(2))
    with pytest.raises(ValueError):
        PriorSpec(psi=[4.0], a=0.0)
    with pytest.raises(ValueError):
        PriorSpec(psi=[4.0], b=[1.0, 2.0]).b_vector(3)
