import dataclasses

import numpy as np
import pytest

from projmc2.simgen import (SimSpec, Truth, _sample_gp, default_spec, initial_state_from_truth,
                            sensitivity_specs, simulate)
from projmc2.spatial import Kernel, pairwise_distances


def test_default_design_values():
    s = default_spec()
    assert s.true_beta[0][0] == 1.0
    assert s.true_sigma2_diag[6] == 3.5
    assert s.prior_phi == (4.0, 6.0)
    assert s.true_phi == (6.0, 9.0)
    assert (s.n, s.p, s.q, s.K) == (2000, 2, 10, 2)


def test_sensitivity_scenarios():
    specs = dict(sensitivity_specs())
    assert specs["Test 1"].prior_phi == (6.0, 9.0)
    assert specs["Test 2"].prior_phi == (9.0, 3.0)
    assert specs["Test 3"].prior_phi == (18.0, 18.0)
    assert all(s.permute_lambda_init for s in specs.values())


def test_noise_variances_recovered():
    data, truth = simulate(default_spec())
    resid = data.y - data.x @ truth.beta - truth.f @ truth.lambda_
    ratio = resid.var(axis=0) / truth.sigma2
    assert np.all(np.abs(ratio - 1) < 0.15)
    assert data.x.shape == (2000, 2) and np.all(data.x[:, 0] == 1.0)


def test_factor_covariance_at_half_unit():
    r = np.random.default_rng(5)
    coords = r.uniform(size=(150, 2))
    d = pairwise_distances(coords, coords)
    iu = np.triu_indices(150, 1)
    sel = np.abs(d[iu] - 0.5) < 0.02
    i, j = iu[0][sel], iu[1][sel]
    expected = np.exp(-6.0 * d[i, j]).mean()
    reps = np.array([(lambda f: np.mean(f[i] * f[j]))(_sample_gp(coords, Kernel(6.0), r))
                     for _ in range(400)])
    se = reps.std(ddof=1) / np.sqrt(len(reps))
    assert abs(reps.mean() - expected) < 3 * se
    assert abs(expected - np.exp(-3.0)) < 0.01


def test_simulation_is_deterministic():
    spec = dataclasses.replace(default_spec(), n=100, seed=4)
    (d1, t1), (d2, t2) = simulate(spec), simulate(spec)
    assert np.array_equal(d1.y, d2.y) and np.array_equal(t1.f, t2.f)
    d3, _ = simulate(dataclasses.replace(spec, seed=5))
    assert not np.array_equal(d1.y, d3.y)


def test_truth_json_roundtrip(tmp_path):
    _, truth = simulate(dataclasses.replace(default_spec(), n=30))
    truth.to_json(tmp_path / "t.json")
    back = Truth.from_json(tmp_path / "t.json")
    assert np.array_equal(back.f, truth.f)
    assert np.array_equal(back.lambda_, truth.lambda_)


def test_permuted_initial_state():
    name, spec = sensitivity_specs(dataclasses.replace(default_spec(), n=40))[1]
    _, truth = simulate(spec)
    st = initial_state_from_truth(spec, truth)
    assert np.array_equal(st.lambda_, truth.lambda_[::-1])
    assert np.array_equal(st.beta, truth.beta)
    assert np.all(st.f_tilde == 0)


def test_spec_validation():
    base = default_spec()
    with pytest.raises(ValueError):
        dataclasses.replace(base, true_phi=(6.0,))
    with pytest.raises(ValueError):
        dataclasses.replace(base, n=2)
    with pytest.raises(ValueError):
        dataclasses.replace(base, true_sigma2_diag=np.zeros(10))
    with pytest.raises(ValueError):
        SimSpec(10, [[1.0]], [[1.0, 2.0]], [1.0], (1.0,), (1.0,))
