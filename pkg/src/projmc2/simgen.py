"""Synthetic data from the spatial factor model with exact (dense) GP factors."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .model import Dataset, ModelState
from .spatial import Kernel, LocationSet, pairwise_distances

TRUE_BETA = (
    (1.0, -1.0, 1.0, -0.5, 2.0, -1.5, 0.5, 0.3, -2.0, 1.5),
    (-3.0, 2.0, 2.0, -1.0, -4.0, 3.0, 4.0, -2.5, 5.0, -3.0),
)
TRUE_LAMBDA = (
    (0.81, 0.49, -0.49, -0.15, -0.8, 0.38, -0.94, 0.86, 0.16, -0.76),
    (-0.11, 0.02, -0.33, 0.74, -0.75, -0.73, -0.3, 0.92, -0.38, -0.59),
)
TRUE_SIGMA2 = (0.5, 1.0, 0.4, 2.0, 0.3, 2.5, 3.5, 0.45, 1.5, 0.5)


@dataclass
class SimSpec:
    n: int
    true_beta: np.ndarray
    true_lambda: np.ndarray
    true_sigma2_diag: np.ndarray
    true_phi: tuple
    prior_phi: tuple
    seed: int = 0
    domain: str = "unit_square"
    permute_lambda_init: bool = False

    def __post_init__(self):
        self.true_beta = np.atleast_2d(np.asarray(self.true_beta, dtype=float))
        self.true_lambda = np.atleast_2d(np.asarray(self.true_lambda, dtype=float))
        self.true_sigma2_diag = np.asarray(self.true_sigma2_diag, dtype=float)
        self.true_phi = tuple(float(v) for v in self.true_phi)
        self.prior_phi = tuple(float(v) for v in self.prior_phi)
        if self.domain != "unit_square":
            raise ValueError("only the unit square domain is supported")
        if self.true_lambda.shape[1] != self.q or self.true_sigma2_diag.shape != (self.q,):
            raise ValueError("beta, Lambda and sigma2 disagree on q")
        if len(self.true_phi) != self.K or len(self.prior_phi) != self.K:
            raise ValueError("decay vectors must have length K")
        if min(self.true_phi + self.prior_phi) <= 0:
            raise ValueError("decays must be positive")
        if not np.all(self.true_sigma2_diag > 0):
            raise ValueError("noise variances must be positive")
        if self.n <= self.p:
            raise ValueError("need n > p")

    @property
    def p(self):
        return self.true_beta.shape[0]

    @property
    def q(self):
        return self.true_beta.shape[1]

    @property
    def K(self):
        return self.true_lambda.shape[0]

    def to_dict(self):
        d = asdict(self)
        for k in ("true_beta", "true_lambda", "true_sigma2_diag"):
            d[k] = np.asarray(d[k]).tolist()
        d["true_phi"] = list(self.true_phi)
        d["prior_phi"] = list(self.prior_phi)
        return d


@dataclass
class Truth:
    f: np.ndarray
    beta: np.ndarray
    lambda_: np.ndarray
    sigma2: np.ndarray
    spec: SimSpec = field(repr=False, default=None)

    def to_json(self, path):
        doc = {
            "K": int(self.f.shape[1]),
            "F": self.f.tolist(),
            "beta": self.beta.tolist(),
            "lambda": self.lambda_.tolist(),
            "sigma2": self.sigma2.tolist(),
        }
        if self.spec is not None:
            doc["spec"] = self.spec.to_dict()
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        f = np.asarray(doc["F"], dtype=float)
        if f.ndim != 2:
            raise ValueError(f"{path}: F must be an n x K matrix")
        return cls(f, np.asarray(doc["beta"], dtype=float),
                   np.asarray(doc["lambda"], dtype=float), np.asarray(doc["sigma2"], dtype=float))


def default_spec() -> SimSpec:
    """n = 2000 sites, q = 10, p = 2, K = 2; true decays (6, 9), fitted with (4, 6)."""
    return SimSpec(
        n=2000,
        true_beta=np.array(TRUE_BETA),
        true_lambda=np.array(TRUE_LAMBDA),
        true_sigma2_diag=np.array(TRUE_SIGMA2),
        true_phi=(6.0, 9.0),
        prior_phi=(4.0, 6.0),
        seed=0,
    )


def gp_covariance(coords, kernel: Kernel):
    return kernel.from_distance(pairwise_distances(coords, coords))


def _sample_gp(coords, kernel, rng):
    cov = gp_covariance(coords, kernel)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        try:
            chol = np.linalg.cholesky(cov + 1e-10 * np.eye(len(cov)))
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError("dense GP covariance is not positive definite") from None
    return chol @ rng.standard_normal(len(cov))


def simulate(spec: SimSpec):
    """Draw (Dataset, Truth) from ``spec``; deterministic in ``spec.seed``.

    Sites are iid uniform on the unit square, ``X = [1, z]`` with ``z``
    standard normal, factor columns are exact exponential-kernel GP draws and
    the noise is independent ``N(0, sigma_j^2)``.
    """
    rng_loc, rng_x, rng_f, rng_e = [np.random.default_rng(s)
                                    for s in np.random.SeedSequence(spec.seed).spawn(4)]
    n = spec.n
    coords = rng_loc.uniform(0.0, 1.0, size=(n, 2))
    x = np.column_stack([np.ones(n)] + [rng_x.standard_normal(n) for _ in range(spec.p - 1)])
    f = np.column_stack([_sample_gp(coords, Kernel(phi), rng_f) for phi in spec.true_phi])
    noise = rng_e.standard_normal((n, spec.q)) * np.sqrt(spec.true_sigma2_diag)[None, :]
    y = x @ spec.true_beta + f @ spec.true_lambda + noise
    data = Dataset(x, y, LocationSet(coords))
    truth = Truth(f, spec.true_beta.copy(), spec.true_lambda.copy(),
                  spec.true_sigma2_diag.copy(), spec)
    return data, truth


def sensitivity_specs(base: SimSpec | None = None):
    """The three prior-decay scenarios, all starting from permuted loadings."""
    base = base if base is not None else default_spec()
    tests = [("Test 1", (6.0, 9.0)), ("Test 2", (9.0, 3.0)), ("Test 3", (18.0, 18.0))]
    return [(name, replace(base, prior_phi=phi, permute_lambda_init=True))
            for name, phi in tests]


def initial_state_from_truth(spec: SimSpec, truth: Truth) -> ModelState:
    """beta and sigma2 at their true values; Lambda true, rows reversed when
    ``spec.permute_lambda_init``. The factors start at zero."""
    lam = truth.lambda_[::-1].copy() if spec.permute_lambda_init else truth.lambda_.copy()
    return ModelState(truth.beta.copy(), lam, truth.sigma2.copy(),
                      np.zeros_like(truth.f))
