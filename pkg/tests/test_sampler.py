import numpy as np
import pytest

from projmc2.diagnostics import align_signs, ess_report
from projmc2.model import Dataset, PriorSpec
from projmc2.nngp import nngp_factors
from projmc2.sampler import (ChainStore, RunConfig, SamplerError, initialize_state,
                             post_center, run_blocked_gibbs, run_chain, run_projmc2)
from projmc2.spatial import LocationSet


@pytest.fixture(scope="module")
def small():
    r = np.random.default_rng(7)
    n, q = 60, 4
    locs = LocationSet(r.uniform(size=(n, 2)))
    x = np.column_stack([np.ones(n), r.standard_normal(n)])
    f = np.column_stack([np.sin(4 * locs.coords[:, 0]), np.cos(5 * locs.coords[:, 1])])
    y = x @ r.standard_normal((2, q)) + f @ r.standard_normal((2, q)) \
        + 0.3 * r.standard_normal((n, q))
    data = Dataset(x, y, locs)
    priors = PriorSpec(psi=[4.0, 6.0], m=8)
    return data, priors, nngp_factors(locs, priors.psi, priors.m)


def test_smoke_run_keeps_every_draw(small):
    data, priors, factors = small
    ch = run_chain(data, priors, RunConfig(iterations=10, warmup=0, seed=1), factors)
    assert len(ch) == 10
    assert ch.ftilde.shape == (10, data.n, 2)
    assert ch.beta.shape == (10, 2, 4) and ch.lambda_.shape == (10, 2, 4)
    assert np.all(ch.sigma2 > 0)


def test_thinning_and_warmup(small):
    data, priors, factors = small
    cfg = RunConfig(iterations=25, warmup=5, thin=4, seed=2)
    assert cfg.retained == 5
    assert len(run_chain(data, priors, cfg, factors)) == 5


def test_projected_draws_live_on_scaled_stiefel(small):
    data, priors, factors = small
    ch = run_projmc2(data, priors, RunConfig(iterations=20, warmup=10, seed=3), factors)
    for f in ch.ftilde:
        assert np.max(np.abs(f.mean(axis=0))) < 1e-10
        assert np.allclose(f.T @ f, data.n * np.eye(2), atol=1e-8)


def test_gibbs_draws_are_not_projected(small):
    data, priors, factors = small
    ch = run_blocked_gibbs(data, priors, RunConfig(iterations=10, warmup=5, seed=3,
                                                    algorithm="Gibbs"), factors)
    f = ch.ftilde[-1]
    assert not np.allclose(f.T @ f, data.n * np.eye(2), atol=1e-3)


def test_determinism(small):
    data, priors, factors = small
    cfg = RunConfig(iterations=15, warmup=5, seed=11)
    a = run_chain(data, priors, cfg, factors)
    b = run_chain(data, priors, cfg, nngp_factors(data.locs, priors.psi, priors.m))
    for name in ("ftilde", "beta", "lambda", "sigma2"):
        assert np.array_equal(a.block(name), b.block(name))
    c = run_chain(data, priors, RunConfig(iterations=15, warmup=5, seed=12), factors)
    assert not np.array_equal(a.beta, c.beta)


def test_initialization_rank_one():
    r = np.random.default_rng(0)
    n, q = 40, 5
    locs = LocationSet(r.uniform(size=(n, 2)))
    x = np.column_stack([np.ones(n), r.standard_normal(n)])
    u = r.standard_normal(n)
    u -= x @ np.linalg.lstsq(x, u, rcond=None)[0]   # residual space of X
    v = r.standard_normal(q)
    data = Dataset(x, x @ r.standard_normal((2, q)) + np.outer(u, v), locs)
    st = initialize_state(data, 1, seed=0)
    lam = st.lambda_[0]
    cos_v = abs(lam @ v) / (np.linalg.norm(lam) * np.linalg.norm(v))
    f = st.f_tilde[:, 0]
    cos_u = abs(f @ u) / (np.linalg.norm(f) * np.linalg.norm(u))
    assert cos_v > 1 - 1e-10 and cos_u > 1 - 1e-10
    assert np.all(st.sigma2 > 0)


def test_k_disagreement(small):
    data, priors, factors = small
    with pytest.raises(ValueError, match="K disagrees"):
        run_chain(data, priors, RunConfig(iterations=5, warmup=0, K=3), factors)


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(algorithm="HMC")
    with pytest.raises(ValueError):
        RunConfig(iterations=10, warmup=10)
    with pytest.raises(ValueError):
        RunConfig(thin=0)


def test_sampler_error_names_iteration(small):
    data, priors, factors = small
    bad = Dataset(data.x, data.y, data.locs)
    cfg = RunConfig(iterations=5, warmup=0)
    init = initialize_state(bad, 2, 0)
    init.sigma2 = -init.sigma2
    with pytest.raises(SamplerError, match="iteration 1"):
        run_chain(bad, priors, cfg, factors, init=init)


def test_post_center_preserves_fit(small):
    data, priors, factors = small
    ch = run_blocked_gibbs(data, priors, RunConfig(iterations=20, warmup=5, algorithm="Gibbs"),
                           factors)
    pc = post_center(ch)
    assert pc.algorithm == "GibbsPost"
    assert np.max(np.abs(pc.fitted(data.x) - ch.fitted(data.x))) < 1e-12
    assert np.max(np.abs(pc.ftilde.mean(axis=1))) < 1e-12
    again = post_center(pc)
    assert np.max(np.abs(again.ftilde - pc.ftilde)) < 1e-12


def test_post_center_needs_intercept(small):
    data, priors, factors = small
    ch = run_chain(data, priors, RunConfig(iterations=3, warmup=0), factors)
    ch.metadata["intercept_index"] = None
    with pytest.raises(ValueError, match="intercept"):
        post_center(ch)


def test_chain_store_roundtrip(small, tmp_path):
    data, priors, factors = small
    ch = run_chain(data, priors, RunConfig(iterations=6, warmup=2), factors)
    ch.save(tmp_path)
    back = ChainStore.load(tmp_path)
    for name in ("ftilde", "beta", "lambda", "sigma2"):
        assert np.array_equal(back.block(name), ch.block(name))
    for key in ("shape", "dtype", "iterations", "warmup", "thin", "seed", "algorithm"):
        assert key in back.metadata
    assert back.metadata["dtype"] == "f64le"
    raw = (tmp_path / "beta.bin").read_bytes()
    (tmp_path / "beta.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="corrupt"):
        ChainStore.load(tmp_path)
    (tmp_path / "beta.bin").write_bytes(raw)
    (tmp_path / "sigma2.bin").unlink()
    with pytest.raises(FileNotFoundError):
        ChainStore.load(tmp_path)


# ------------------------------------------------------ desk-scale mixing


@pytest.mark.slow
def test_desk_projected_loadings_mix(desk_chains):
    rep = ess_report(align_signs(desk_chains["ProjMC2"]))
    assert rep["lambda"].min > 100


@pytest.mark.slow
def test_desk_gibbs_intercept_mixes_poorly(desk_chains):
    rep = ess_report(align_signs(desk_chains["Gibbs"]))
    assert rep["beta0"].min < 100


@pytest.mark.slow
def test_desk_gibbs_slopes_mix_well(desk_chains):
    rep = ess_report(align_signs(desk_chains["Gibbs"]))
    assert rep["beta1"].median > 1000
