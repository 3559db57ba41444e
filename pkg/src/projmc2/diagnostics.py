"""Chain diagnostics: effective sample size, sign alignment of factor/loading
pairs, directional summaries on the unit sphere and factor-recovery metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .model import project_g
from .sampler import ChainStore

log = logging.getLogger(__name__)

ESS_CAP = 1.5
LOW_ESS = 100
BLOCK_NAMES = ("beta0", "beta1", "beta", "lambda", "F", "sigma2")


def _ess_columns(chains):
    """Geyer initial-monotone-sequence ESS for each column of an (N, m) array."""
    x = np.asarray(chains, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    N = x.shape[0]
    if N < 10:
        raise ValueError("ESS needs a chain of length >= 10")
    xc = x - x.mean(axis=0)
    nfft = 1 << int(np.ceil(np.log2(2 * N)))
    spec = np.fft.rfft(xc, n=nfft, axis=0)
    acov = np.fft.irfft(spec * np.conj(spec), n=nfft, axis=0)[:N] / N
    var0 = acov[0]
    const = ~(var0 > 0)
    safe = np.where(const, 1.0, var0)
    rho = acov / safe
    npairs = N // 2
    gam = rho[0:2 * npairs:2] + rho[1:2 * npairs:2]    # (npairs, m)
    # initial positive sequence: keep pairs up to the first non-positive one
    nonpos = gam <= 0
    first = np.where(nonpos.any(axis=0), nonpos.argmax(axis=0), npairs)
    keep = np.arange(npairs)[:, None] < first[None, :]
    # initial monotone sequence
    gam = np.minimum.accumulate(np.where(keep, gam, np.inf), axis=0)
    gam = np.where(keep, gam, 0.0)
    tau = -1.0 + 2.0 * gam.sum(axis=0)
    ess = N / np.maximum(tau, 1.0 / ESS_CAP)
    if const.any():
        log.info("%d constant chain(s); ESS set to the chain length", int(const.sum()))
        ess = np.where(const, float(N), ess)
    return ess


def effective_sample_size(chain) -> float:
    """ESS of a scalar chain via Geyer's initial monotone sequence estimator.

    Capped at 1.5 times the chain length; a constant chain gets its length.
    """
    chain = np.asarray(chain, dtype=float).ravel()
    return float(_ess_columns(chain)[0])


@dataclass
class BlockESS:
    block: str
    min: float
    mean: float
    median: float
    frac_below_100: float
    count: int


@dataclass
class ESSReport:
    blocks: dict

    def __getitem__(self, name) -> BlockESS:
        return self.blocks[name]

    def rows(self):
        return list(self.blocks.values())


def block_values(chains: ChainStore, name):
    """(R, m) matrix of scalar chains belonging to a named parameter block."""
    R = len(chains)
    if name == "beta":
        return chains.beta.reshape(R, -1)
    if name in ("beta0", "beta1"):
        idx = chains.intercept_index
        if idx is None:
            raise ValueError("chains have no intercept column; beta0/beta1 are undefined")
        if name == "beta0":
            return chains.beta[:, idx, :]
        rest = [j for j in range(chains.beta.shape[1]) if j != idx]
        return chains.beta[:, rest, :].reshape(R, -1)
    if name == "lambda":
        return chains.lambda_.reshape(R, -1)
    if name == "F":
        return chains.ftilde.reshape(R, -1)
    if name == "sigma2":
        return chains.sigma2
    raise ValueError(f"unknown block name {name!r}; expected one of {BLOCK_NAMES}")


def ess_report(chains: ChainStore, blocks=("beta0", "beta1", "lambda", "F", "sigma2")):
    out = {}
    for name in blocks:
        vals = block_values(chains, name)
        ess = _ess_columns(vals)
        out[name] = BlockESS(name, float(ess.min()), float(ess.mean()), float(np.median(ess)),
                             float(np.mean(ess < LOW_ESS)), int(ess.size))
    return ESSReport(out)


def align_signs(chains: ChainStore) -> ChainStore:
    """Single-pass sign alignment against the posterior mean loading rows.

    For every draw and factor ``k``, when the draw's loading row has a
    negative inner product with the mean row, that row and factor column
    ``k`` are negated. ``F Lambda`` is unchanged per draw.
    """
    lam = chains.lambda_
    mean_rows = lam.mean(axis=0)                                   # (K, q)
    flip = np.einsum("rkq,kq->rk", lam, mean_rows) < 0
    sign = np.where(flip, -1.0, 1.0)
    out = chains.replace(ftilde=chains.ftilde * sign[:, None, :],
                         lambda_=lam * sign[:, :, None])
    out.metadata["sign_aligned"] = True
    return out


@dataclass
class SphericalSummary:
    mean_direction: np.ndarray
    r_bar: float
    spherical_variance: float


class DegenerateDirectionError(ValueError):
    pass


def spherical_summary(samples) -> SphericalSummary:
    """Mean direction, mean resultant length and ``1 - R^2`` of unit-normalized
    samples (rows of ``samples``)."""
    s = np.asarray(samples, dtype=float)
    if s.ndim != 2 or s.shape[0] < 2:
        raise ValueError("need at least two sample vectors")
    norms = np.linalg.norm(s, axis=1)
    if not np.all(norms > 0):
        raise ValueError("sample vectors must be nonzero")
    avg = (s / norms[:, None]).mean(axis=0)
    r_bar = float(np.linalg.norm(avg))
    if r_bar < 1e-12:
        raise DegenerateDirectionError("degenerate mean direction")
    r_bar = min(r_bar, 1.0)
    return SphericalSummary(avg / np.linalg.norm(avg), r_bar, 1.0 - r_bar ** 2)


@dataclass
class FactorMetric:
    factor: int
    euclidean_distance: float
    spherical_variance: float
    sign: int


def reference_factors(true_f, mode):
    """Unit-norm columns of the truth in the geometry of a sampler's output."""
    f = np.asarray(true_f, dtype=float)
    if mode == "sphere":
        ref = f - f.mean(axis=0)
    elif mode == "stiefel":
        ref = project_g(f)
    else:
        raise ValueError(f"unknown mode {mode!r}; expected 'sphere' or 'stiefel'")
    return ref / np.linalg.norm(ref, axis=0)


def factor_recovery_metrics(true_f, chains: ChainStore, mode="stiefel"):
    """Distance between each factor's posterior mean direction and the truth,
    and the spherical variance of its draws.

    The overall sign of a factor is not identified, so the estimate is
    compared with whichever of ``+truth`` / ``-truth`` it is closer to.
    """
    true_f = np.asarray(true_f, dtype=float)
    K = chains.ftilde.shape[2]
    if true_f.ndim != 2 or true_f.shape[1] != K:
        found = true_f.shape[1] if true_f.ndim == 2 else None
        raise ValueError(f"K mismatch: chains have K={K}, truth has K={found}")
    if true_f.shape[0] != chains.ftilde.shape[1]:
        raise ValueError(f"truth has {true_f.shape[0]} sites, chains have {chains.ftilde.shape[1]}")
    ref = reference_factors(true_f, mode)
    out = []
    for k in range(K):
        summ = spherical_summary(chains.ftilde[:, :, k])
        dpos = np.linalg.norm(summ.mean_direction - ref[:, k])
        dneg = np.linalg.norm(summ.mean_direction + ref[:, k])
        sign = 1 if dpos <= dneg else -1
        out.append(FactorMetric(k, float(min(dpos, dneg)), summ.spherical_variance, sign))
    return out


def neighbor_autocorrelation(values, coords, k=5):
    """Pearson correlation of ``values`` over all (site, k-nearest-neighbor)
    pairs; a lag-one smoothness measure for a spatial field."""
    values = np.asarray(values, dtype=float)
    coords = np.asarray(coords, dtype=float)
    _, idx = cKDTree(coords).query(coords, k=k + 1)
    a = np.repeat(values, k)
    b = values[idx[:, 1:].ravel()]
    return float(np.corrcoef(a, b)[0, 1])


def posterior_factor_means(chains: ChainStore):
    """Per-factor mean direction of the draws, stacked as columns (n, K)."""
    K = chains.ftilde.shape[2]
    return np.column_stack([spherical_summary(chains.ftilde[:, :, k]).mean_direction
                            for k in range(K)])
