"""MCMC drivers: projected MCMC, the blocked Gibbs baseline, and Gibbs with
post-hoc factor centering. Also chain storage and its on-disk format."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .linalg import RankDeficiencyError, randomized_svd
from .model import (Dataset, FactorPrior, ModelState, PriorSpec, build_factor_system,
                    conditional_mniw_params, project_g, sample_F, sample_gamma,
                    sample_sigma2)
from .nngp import nngp_factors

log = logging.getLogger(__name__)

ALGORITHMS = ("ProjMC2", "Gibbs", "GibbsPost")
BLOCKS = ("ftilde", "beta", "lambda", "sigma2")


class SamplerError(RuntimeError):
    pass


@dataclass
class RunConfig:
    iterations: int = 20000
    warmup: int = 5000
    thin: int = 1
    seed: int = 0
    algorithm: str = "ProjMC2"
    K: int = 2
    lsmr_atol: float = 1e-8
    lsmr_btol: float = 1e-8
    lsmr_max_iter: int | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if not 0 <= self.warmup < self.iterations:
            raise ValueError("need 0 <= warmup < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.K < 1:
            raise ValueError("K must be >= 1")

    @property
    def retained(self):
        return (self.iterations - self.warmup) // self.thin


@dataclass
class ChainStore:
    """Retained draws, first axis indexing the draw."""

    ftilde: np.ndarray      # (R, n, K); raw F for the Gibbs variants
    beta: np.ndarray        # (R, p, q)
    lambda_: np.ndarray     # (R, K, q)
    sigma2: np.ndarray      # (R, q)
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return self.beta.shape[0]

    @property
    def algorithm(self):
        return self.metadata.get("algorithm")

    @property
    def intercept_index(self):
        return self.metadata.get("intercept_index")

    def block(self, name):
        return {"ftilde": self.ftilde, "beta": self.beta, "lambda": self.lambda_,
                "sigma2": self.sigma2}[name]

    def replace(self, **arrays):
        kw = {"ftilde": self.ftilde, "beta": self.beta, "lambda_": self.lambda_,
              "sigma2": self.sigma2, "metadata": dict(self.metadata)}
        kw.update(arrays)
        return ChainStore(**kw)

    def fitted(self, x):
        """Per-draw ``X beta + F Lambda``, shape (R, n, q)."""
        return np.einsum("np,rpq->rnq", x, self.beta) + np.einsum(
            "rnk,rkq->rnq", self.ftilde, self.lambda_)

    def save(self, directory):
        """Write ``metadata.json`` plus one little-endian float64 file per block."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = dict(self.metadata)
        meta["dtype"] = "f64le"
        meta["shape"] = {b: list(self.block(b).shape) for b in BLOCKS}
        for b in BLOCKS:
            np.ascontiguousarray(self.block(b), dtype="<f8").tofile(directory / f"{b}.bin")
        with open(directory / "metadata.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        meta_path = directory / "metadata.json"
        if not meta_path.exists():
            raise FileNotFoundError(f"{meta_path}: chain metadata not found")
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        if meta.get("dtype") != "f64le":
            raise ValueError(f"{meta_path}: unsupported dtype {meta.get('dtype')!r}")
        arrays = {}
        for b in BLOCKS:
            path = directory / f"{b}.bin"
            if not path.exists():
                raise FileNotFoundError(f"{path}: chain block not found")
            shape = tuple(meta["shape"][b])
            raw = np.fromfile(path, dtype="<f8")
            if raw.size != int(np.prod(shape)):
                raise ValueError(
                    f"{path}: corrupt block, expected {int(np.prod(shape))} values "
                    f"for shape {shape}, found {raw.size}")
            arrays[b] = raw.reshape(shape).astype(float)
        return cls(arrays["ftilde"], arrays["beta"], arrays["lambda"], arrays["sigma2"], meta)


def _streams(seed):
    # one child stream per purpose so extra draws in one never shift another
    children = np.random.SeedSequence(seed).spawn(4)
    return [np.random.default_rng(c) for c in children]


def initialize_state(data: Dataset, K, seed) -> ModelState:
    """OLS for beta, rank-K randomized SVD of the residuals for (F, Lambda).

    ``F = U S`` and ``Lambda = V^T``, factors in decreasing singular value
    order; ``sigma2`` is the per-outcome variance of what is left.
    """
    rng_init = _streams(seed)[0]
    beta, *_ = np.linalg.lstsq(data.x, data.y, rcond=None)
    resid = data.y - data.x @ beta
    u, s, v = randomized_svd(resid, K, seed=rng_init)
    f = u * s[None, :]
    lam = v.T.copy()
    left = resid - f @ lam
    sigma2 = left.var(axis=0, ddof=1)
    floor = 1e-8 * np.maximum(data.y.var(axis=0), 1.0)
    sigma2 = np.maximum(sigma2, floor)
    return ModelState(beta, lam, sigma2, f)


def _run(data, priors, cfg, factors, project, init=None, algorithm=None, progress=None):
    prior = factors if isinstance(factors, FactorPrior) else FactorPrior(factors)
    K = prior.K
    if K != cfg.K or priors.K != K:
        raise ValueError(f"K disagrees: config {cfg.K}, priors {priors.K}, NNGP factors {K}")
    state = init.copy() if init is not None else initialize_state(data, K, cfg.seed)
    if project:
        try:
            state.f_tilde = project_g(state.f_tilde)
        except RankDeficiencyError:
            pass  # the initial F is never read before it is redrawn
    _, rng_f, rng_s, rng_g = _streams(cfg.seed)

    n, p, q = data.n, data.p, data.q
    R = cfg.retained
    out_f = np.empty((R, n, K))
    out_b = np.empty((R, p, q))
    out_l = np.empty((R, K, q))
    out_s = np.empty((R, q))
    warnings = 0
    lsmr_iters = 0
    t0 = time.perf_counter()
    slot = 0
    for it in range(1, cfg.iterations + 1):
        try:
            system = build_factor_system(state, data, prior)
            f, info = sample_F(system, rng_f, atol=cfg.lsmr_atol, btol=cfg.lsmr_btol,
                               max_iter=cfg.lsmr_max_iter, return_info=True)
            lsmr_iters += info.iterations
            if not info.converged:
                warnings += 1
            if project:
                f = project_g(f)
            params = conditional_mniw_params(f, data, priors)
            sigma2 = sample_sigma2(params, rng_s)
            beta, lam = sample_gamma(params, sigma2, rng_g)
        except Exception as exc:
            raise SamplerError(f"iteration {it}: {exc}") from exc
        state = ModelState(beta, lam, sigma2, f)
        if it > cfg.warmup and (it - cfg.warmup) % cfg.thin == 0:
            out_f[slot], out_b[slot], out_l[slot], out_s[slot] = f, beta, lam, sigma2
            slot += 1
        if progress is not None:
            progress(it)
    wall = time.perf_counter() - t0
    meta = {
        "algorithm": algorithm or ("ProjMC2" if project else "Gibbs"),
        "iterations": cfg.iterations,
        "warmup": cfg.warmup,
        "thin": cfg.thin,
        "seed": cfg.seed,
        "n": n, "p": p, "q": q, "K": K,
        "intercept_index": data.intercept_index,
        "config": asdict(cfg),
        "wall_time": wall,
        "lsmr_warnings": warnings,
        "lsmr_mean_iterations": lsmr_iters / cfg.iterations,
    }
    if warnings:
        log.warning("%d LSMR solves hit the iteration limit", warnings)
    return ChainStore(out_f, out_b, out_l, out_s, meta)


def run_projmc2(data: Dataset, priors: PriorSpec, cfg: RunConfig, factors, init=None,
                progress=None) -> ChainStore:
    """Projected MCMC.

    Each iteration draws ``F`` given (beta, Lambda, sigma2), projects it with
    :func:`project_g`, then draws ``sigma2`` and ``(beta, Lambda)`` from their
    conjugate conditionals given the projected factors.
    """
    return _run(data, priors, cfg, factors, True, init, "ProjMC2", progress)


def run_blocked_gibbs(data: Dataset, priors: PriorSpec, cfg: RunConfig, factors, init=None,
                      progress=None) -> ChainStore:
    """Same sweep as :func:`run_projmc2` without the projection step."""
    return _run(data, priors, cfg, factors, False, init, "Gibbs", progress)


def post_center(chains: ChainStore) -> ChainStore:
    """Center each draw's factor columns and move the means into the intercept.

    ``X beta + F Lambda`` is unchanged draw by draw.
    """
    idx = chains.intercept_index
    if idx is None:
        raise ValueError("chains lack an intercept column; cannot compensate centering")
    fbar = chains.ftilde.mean(axis=1)                     # (R, K)
    f = chains.ftilde - fbar[:, None, :]
    beta = chains.beta.copy()
    beta[:, idx, :] += np.einsum("rk,rkq->rq", fbar, chains.lambda_)
    out = chains.replace(ftilde=f, beta=beta)
    out.metadata["algorithm"] = "GibbsPost"
    return out


def run_chain(data: Dataset, priors: PriorSpec, cfg: RunConfig, factors=None, init=None,
              progress=None) -> ChainStore:
    """Dispatch on ``cfg.algorithm``; builds NNGP factors from ``priors`` if
    none are given."""
    if factors is None:
        factors = nngp_factors(data.locs, priors.psi, priors.m)
    if cfg.algorithm == "ProjMC2":
        return run_projmc2(data, priors, cfg, factors, init, progress)
    chains = run_blocked_gibbs(data, priors, cfg, factors, init, progress)
    if cfg.algorithm == "GibbsPost":
        chains = post_center(chains)
        chains.metadata["config"]["algorithm"] = "GibbsPost"
    return chains
