"""Bayesian spatial factor model: data containers, priors, the projection
onto the centered scaled Stiefel manifold, and the conjugate conditional
updates used by every sampler.

Model: ``Y = X beta + F Lambda + E`` with ``E`` rows ``N(0, diag(sigma2))``
and each column of ``F`` an independent NNGP.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .linalg import LinearOperator, lsmr, mgs_thin_qr
from .spatial import Kernel, LocationSet

log = logging.getLogger(__name__)


class UnidentifiedError(np.linalg.LinAlgError):
    pass


@dataclass
class Dataset:
    """Design ``x`` (n x p), outcomes ``y`` (n x q) and their sites."""

    x: np.ndarray
    y: np.ndarray
    locs: LocationSet

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if self.x.shape[0] != self.y.shape[0] or self.x.shape[0] != self.locs.n:
            raise ValueError(
                f"row counts disagree: X has {self.x.shape[0]}, Y has {self.y.shape[0]}, "
                f"locations has {self.locs.n}")
        n, p = self.x.shape
        if not n > p:
            raise ValueError(f"need n > p, got n={n}, p={p}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("X and Y must be finite")
        sv = np.linalg.svd(self.x, compute_uv=False)
        if not sv[-1] > 1e-10 * sv[0]:
            raise ValueError("design matrix X is rank deficient")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def q(self):
        return self.y.shape[1]

    @property
    def intercept_index(self):
        """Index of the first all-ones column of X, or None."""
        ones = np.flatnonzero(np.all(self.x == 1.0, axis=0))
        return int(ones[0]) if ones.size else None


@dataclass
class MatrixNormalPrior:
    """Row-covariance part of ``MN(mean, cov, Sigma)``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_2d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        r = self.mean.shape[0]
        if self.cov.shape != (r, r):
            raise ValueError(f"prior covariance must be {r}x{r}, got {self.cov.shape}")
        try:
            chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise ValueError("prior covariance is not positive definite") from None
        # whitening rows L^{-1}, with cov = L L^T
        self.chol_inv = scipy.linalg.solve_triangular(chol, np.eye(r), lower=True)


@dataclass
class PriorSpec:
    """Priors for (beta, Lambda, sigma2) and the fixed factor kernels.

    ``beta_prior`` / ``lambda_prior`` set to None mean a flat prior.
    """

    psi: list
    a: float = 2.0
    b: object = 1.0
    beta_prior: MatrixNormalPrior | None = None
    lambda_prior: MatrixNormalPrior | None = None
    m: int = 15

    def __post_init__(self):
        self.psi = [k if isinstance(k, Kernel) else Kernel(float(k)) for k in self.psi]
        if len(self.psi) < 1:
            raise ValueError("need at least one factor kernel (K >= 1)")
        if not self.a > 0:
            raise ValueError("inverse-gamma shape a must be positive")
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if not np.all(self.b > 0):
            raise ValueError("inverse-gamma scales b must be positive")

    @property
    def K(self):
        return len(self.psi)

    def b_vector(self, q):
        if self.b.size == 1:
            return np.full(q, float(self.b[0]))
        if self.b.size != q:
            raise ValueError(f"prior scale b has length {self.b.size}, expected {q}")
        return self.b


@dataclass
class ModelState:
    beta: np.ndarray
    lambda_: np.ndarray
    sigma2: np.ndarray
    f_tilde: np.ndarray

    def copy(self):
        return ModelState(self.beta.copy(), self.lambda_.copy(), self.sigma2.copy(),
                          self.f_tilde.copy())


@dataclass
class MNIWCondParams:
    """Conditional ``gamma | F`` mean, Cholesky of ``V*^{-1}`` and the
    inverse-gamma parameters of each ``sigma_j^2``."""

    mu_star: np.ndarray
    chol_vstar_inv: np.ndarray
    b_star: np.ndarray
    a_star: float
    p: int

    @property
    def v_star(self):
        li = scipy.linalg.solve_triangular(self.chol_vstar_inv, np.eye(len(self.mu_star)),
                                           lower=True)
        return li.T @ li


@dataclass
class FullMNIWParams:
    mu_star: np.ndarray
    v_star: np.ndarray
    psi_star: np.ndarray
    nu_star: float


# ----------------------------------------------------------------- projection


def project_g(f):
    """Center the columns of ``f`` and map to ``sqrt(n) * Q`` of its MGS thin QR.

    The image has zero column means and ``F^T F = n I``. Any
    ``g(f) R + 1 mu^T`` with ``R`` upper triangular, positive diagonal, maps
    back to ``g(f)``.
    """
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    n = f.shape[0]
    centered = f - f.mean(axis=0)
    q, _ = mgs_thin_qr(centered)
    return np.sqrt(n) * q


# -------------------------------------------------------- factor conditional


class FactorPrior:
    """Stacked whitening rows ``diag(L_1^{-1}, ..., L_K^{-1})`` for vec(F)."""

    def __init__(self, factors):
        self.factors = list(factors)
        if not self.factors:
            raise ValueError("need at least one NNGP factor")
        self.n = self.factors[0].n
        if any(f.n != self.n for f in self.factors):
            raise ValueError("NNGP factors disagree on the number of sites")
        self.K = len(self.factors)
        self.block = sp.block_diag([f.whitening_matrix() for f in self.factors], format="csr")
        self.block_t = self.block.T.tocsr()


class FactorSystem(LinearOperator):
    """Whitened least-squares system for ``vec(F) | beta, Lambda, sigma2, Y``.

    Rows ``j*n + i`` (outcome block) hold ``sum_k lambda_kj f_k(i) / sigma_j``;
    rows ``nq + k*n + i`` hold ``L_k^{-1} f_k``. ``vec`` stacks columns.
    """

    def __init__(self, lambda_, sigma2, prior: FactorPrior):
        self.prior = prior
        self.n, self.K = prior.n, prior.K
        lam = np.asarray(lambda_, dtype=float)
        if lam.shape[0] != self.K:
            raise ValueError(f"Lambda has {lam.shape[0]} rows, expected K={self.K}")
        self.q = lam.shape[1]
        self.weights = lam / np.sqrt(np.asarray(sigma2, dtype=float))[None, :]
        n, q, K = self.n, self.q, self.K
        super().__init__(n * (q + K), n * K, self._forward, self._adjoint)

    def _forward(self, x):
        n, K = self.n, self.K
        fmat = x.reshape(K, n)
        top = (self.weights.T @ fmat).ravel()
        return np.concatenate([top, self.prior.block @ x])

    def _adjoint(self, y):
        n, q = self.n, self.q
        t = y[: n * q].reshape(q, n)
        return (self.weights @ t).ravel() + self.prior.block_t @ y[n * q:]

    def normal_matrix(self):
        """Dense ``X~^T X~`` (checks only)."""
        ww = self.weights @ self.weights.T
        top = np.kron(ww, np.eye(self.n))
        return top + (self.prior.block_t @ self.prior.block).toarray()


def build_factor_system(state: ModelState, data: Dataset, factors):
    """Operator and right-hand side of the whitened ``vec(F)`` system.

    ``factors`` is a list of :class:`NNGPFactor` or a prebuilt
    :class:`FactorPrior`.
    """
    prior = factors if isinstance(factors, FactorPrior) else FactorPrior(factors)
    beta = np.asarray(state.beta, dtype=float)
    sigma2 = np.asarray(state.sigma2, dtype=float)
    if prior.n != data.n:
        raise ValueError(f"NNGP factors cover {prior.n} sites, data has {data.n}")
    if beta.shape != (data.p, data.q):
        raise ValueError(f"beta shape {beta.shape}, expected {(data.p, data.q)}")
    if np.shape(state.lambda_) != (prior.K, data.q):
        raise ValueError(f"Lambda shape {np.shape(state.lambda_)}, expected {(prior.K, data.q)}")
    if sigma2.shape != (data.q,) or not np.all(sigma2 > 0):
        raise ValueError("sigma2 must be a positive vector of length q")
    op = FactorSystem(state.lambda_, sigma2, prior)
    resid = (data.y - data.x @ beta) / np.sqrt(sigma2)
    rhs = np.concatenate([resid.T.ravel(), np.zeros(data.n * prior.K)])
    return op, rhs


def sample_F(system, rng, noise=None, atol=1e-8, btol=1e-8, max_iter=None,
             return_info=False):
    """Draw ``F`` from its Gaussian full conditional.

    Solves ``min ||X~ x - (Y~ + v)||`` with ``v ~ N(0, I)`` over every
    augmented row, so ``x`` has mean ``(X~^T X~)^{-1} X~^T Y~`` and
    covariance ``(X~^T X~)^{-1}``. Pass ``noise`` (e.g. zeros) to fix ``v``.
    """
    op, rhs = system
    if noise is None:
        noise = rng.standard_normal(op.nrows)
    res = lsmr(op, rhs + noise, atol=atol, btol=btol, max_iter=max_iter)
    if not res.converged:
        log.warning("LSMR stopped at the iteration limit (%d iterations)", res.iterations)
    f = res.x.reshape(op.K, op.n).T.copy()
    return (f, res) if return_info else f


# ------------------------------------------------------- (gamma, sigma2) step


def _augmented_system(f, data: Dataset, priors: PriorSpec):
    f = np.asarray(f, dtype=float)
    n, p, q = data.n, data.p, data.q
    K = f.shape[1]
    if f.shape[0] != n:
        raise ValueError(f"factor matrix has {f.shape[0]} rows, expected {n}")
    xs = [np.hstack([data.x, f])]
    ys = [data.y]
    if priors.beta_prior is not None:
        bp = priors.beta_prior
        if bp.mean.shape != (p, q):
            raise ValueError(f"beta prior mean must be {p}x{q}")
        xs.append(np.hstack([bp.chol_inv, np.zeros((p, K))]))
        ys.append(bp.chol_inv @ bp.mean)
    if priors.lambda_prior is not None:
        lp = priors.lambda_prior
        if lp.mean.shape != (K, q):
            raise ValueError(f"Lambda prior mean must be {K}x{q}")
        xs.append(np.hstack([np.zeros((K, p)), lp.chol_inv]))
        ys.append(lp.chol_inv @ lp.mean)
    return np.vstack(xs), np.vstack(ys)


def conditional_mniw_params(f_tilde, data: Dataset, priors: PriorSpec) -> MNIWCondParams:
    """Conjugate ``(gamma, sigma2) | F`` parameters for diagonal Sigma.

    ``gamma = [beta; Lambda]`` has mean ``mu* = (X*^T X*)^{-1} X*^T Y*`` over
    the prior-augmented system; each ``sigma_j^2`` is
    ``IG(a + n/2, b_j + ||(Y* - X* mu*)_j||^2 / 2)``. Flat priors contribute no
    augmentation rows.
    """
    xs, ys = _augmented_system(f_tilde, data, priors)
    gram = xs.T @ xs
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise UnidentifiedError("unidentified regression/loadings") from None
    dg = np.diag(chol)
    # (min/max)^2 tracks 1/cond(X*^T X*)
    if not (dg.min() / dg.max()) ** 2 > 1e3 * np.finfo(float).eps:
        raise UnidentifiedError("unidentified regression/loadings")
    mu = scipy.linalg.cho_solve((chol, True), xs.T @ ys)
    resid = ys - xs @ mu
    b_star = priors.b_vector(data.q) + 0.5 * np.sum(resid * resid, axis=0)
    a_star = priors.a + 0.5 * data.n
    return MNIWCondParams(mu, chol, b_star, a_star, data.p)


def sample_sigma2(params: MNIWCondParams, rng):
    """Independent ``IG(a*, b*_j)`` draws."""
    g = rng.gamma(params.a_star, 1.0, size=params.b_star.shape)
    return params.b_star / g


def sample_gamma(params: MNIWCondParams, sigma2, rng, noise=None):
    """Draw ``gamma ~ MN(mu*, V*, diag(sigma2))`` and split into (beta, Lambda).

    ``gamma = mu* + L*^{-T} U`` where ``L* L*^T = V*^{-1}`` and
    ``U_ij ~ N(0, sigma_j^2)``. ``noise`` overrides the standard-normal matrix
    behind ``U``.
    """
    r, q = params.mu_star.shape
    z = rng.standard_normal((r, q)) if noise is None else np.asarray(noise, dtype=float)
    u = z * np.sqrt(np.asarray(sigma2, dtype=float))[None, :]
    gamma = params.mu_star + scipy.linalg.solve_triangular(
        params.chol_vstar_inv, u, lower=True, trans="T")
    return gamma[: params.p].copy(), gamma[params.p:].copy()


def conditional_mniw_full_sigma_oracle(f, data: Dataset, priors: PriorSpec, psi, nu):
    """Dense full-covariance MNIW conditional, for small cross-checks.

    Returns ``mu*``, ``V* = (X*^T X*)^{-1}``, ``Psi* = Psi + S*`` and
    ``nu* = nu + n``.
    """
    if data.n > 200:
        raise ValueError("the full-Sigma oracle is meant for n <= 200")
    xs, ys = _augmented_system(f, data, priors)
    v_star = np.linalg.inv(xs.T @ xs)
    mu = v_star @ (xs.T @ ys)
    resid = ys - xs @ mu
    s_star = resid.T @ resid
    return FullMNIWParams(mu, v_star, np.asarray(psi, dtype=float) + s_star, nu + data.n)
