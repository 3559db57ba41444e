import dataclasses
import re

import numpy as np
import pytest

from projmc2.model import PriorSpec
from projmc2.nngp import nngp_factors
from projmc2.sampler import RunConfig, run_chain
from projmc2.simgen import default_spec, simulate

DESK_N = 500
DESK_ITER = 4000
DESK_WARMUP = 1000

_acceptance = {}


def pytest_addoption(parser):
    parser.addoption("--run-full", action="store_true", default=False,
                     help="run the hours-long full-size replication")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-full"):
        return
    skip = pytest.mark.skip(reason="full-size replication; pass --run-full")
    for item in items:
        if "full" in item.keywords:
            item.add_marker(skip)


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        if hasattr(report, "wasxfail"):
            outcome = "FAIL (known, marked xfail)" if report.skipped else "PASS (unexpected)"
        else:
            outcome = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        _acceptance[key] = outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), outcome in sorted(_acceptance.items()):
        terminalreporter.write_line(f"[{outcome}] criterion {num}: {name.replace('_', ' ')}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_problem():
    """n = 500 sub-simulation of the default design, fitted with decays (4, 6)."""
    spec = dataclasses.replace(default_spec(), n=DESK_N)
    data, truth = simulate(spec)
    priors = PriorSpec(psi=spec.prior_phi, a=2.0, b=1.0, m=15)
    factors = nngp_factors(data.locs, priors.psi, priors.m)
    return spec, data, truth, priors, factors


@pytest.fixture(scope="session")
def desk_chains(desk_problem):
    """One ProjMC2 and one blocked Gibbs chain on the desk problem."""
    _, data, _, priors, factors = desk_problem
    out = {}
    for alg in ("ProjMC2", "Gibbs"):
        cfg = RunConfig(iterations=DESK_ITER, warmup=DESK_WARMUP, thin=1, seed=0,
                        algorithm=alg, K=2)
        out[alg] = run_chain(data, priors, cfg, factors)
    return out
