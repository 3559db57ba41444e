"""Matrix-free least squares (LSMR), modified Gram-Schmidt thin QR and
randomized SVD."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class LinearOperator:
    """Matrix-free ``nrows x ncols`` operator given by its forward and adjoint
    products."""

    nrows: int
    ncols: int
    forward: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    def matvec(self, x):
        return self.forward(x)

    def rmatvec(self, y):
        return self.adjoint(y)

    def to_dense(self):
        """Materialize column by column. Only for small operators in tests."""
        cols = [self.forward(e) for e in np.eye(self.ncols)]
        return np.column_stack(cols) if cols else np.zeros((self.nrows, 0))

    @classmethod
    def from_matrix(cls, mat):
        mat = mat if hasattr(mat, "tocsr") else np.asarray(mat, dtype=float)
        mt = mat.T
        return cls(mat.shape[0], mat.shape[1], lambda x: mat @ x, lambda y: mt @ y)


def adjoint_mismatch(op: LinearOperator, rng, probes: int = 5) -> float:
    """Largest relative gap ``|<Ax, y> - <x, A^T y>|`` over random probes."""
    worst = 0.0
    for _ in range(probes):
        x = rng.standard_normal(op.ncols)
        y = rng.standard_normal(op.nrows)
        ax, aty = op.forward(x), op.adjoint(y)
        lhs, rhs = ax @ y, x @ aty
        scale = np.linalg.norm(ax) * np.linalg.norm(y) + np.linalg.norm(x) * np.linalg.norm(aty)
        worst = max(worst, abs(lhs - rhs) / max(scale, np.finfo(float).tiny))
    return worst


# --------------------------------------------------------------------- LSMR

LSMR_REASONS = {
    0: "zero solution",
    1: "compatible system",
    2: "least-squares solution",
    3: "condition limit",
    4: "compatible system (machine precision)",
    5: "least-squares solution (machine precision)",
    6: "condition limit (machine precision)",
    7: "iteration limit",
}


@dataclass
class LSMRResult:
    x: np.ndarray
    iterations: int
    istop: int
    normr: float
    normar: float
    normar_history: list = field(default_factory=list)

    @property
    def reason(self) -> str:
        return LSMR_REASONS[self.istop]

    @property
    def converged(self) -> bool:
        return self.istop != 7

    def __iter__(self):
        # unpacks as (solution, iterations, termination reason)
        return iter((self.x, self.iterations, self.reason))


def _sym_ortho(a, b):
    # stable Givens rotation: returns c, s, r with [c s; -s c][a; b] = [r; 0]
    if b == 0:
        return math.copysign(1.0, a) if a != 0 else 1.0, 0.0, abs(a)
    if a == 0:
        return 0.0, math.copysign(1.0, b), abs(b)
    if abs(b) > abs(a):
        tau = a / b
        s = math.copysign(1.0, b) / math.sqrt(1.0 + tau * tau)
        c = s * tau
        return c, s, b / s
    tau = b / a
    c = math.copysign(1.0, a) / math.sqrt(1.0 + tau * tau)
    s = c * tau
    return c, s, a / c


def lsmr(op, rhs, atol=1e-8, btol=1e-8, max_iter=None, conlim=None, callback=None):
    """Solve ``min ||op x - rhs||`` by LSMR (Fong and Saunders, 2011).

    Only ``op.forward`` and ``op.adjoint`` are used; ``op^T op`` is never
    formed. ``||op^T r_k||`` is non-increasing in exact arithmetic, and the
    running estimates are returned in ``normar_history``.

    Parameters
    ----------
    op : LinearOperator or matrix
    rhs : ndarray, shape (nrows,)
    atol, btol : float
        Stopping tolerances, as in LSQR/LSMR.
    max_iter : int, optional
        Defaults to ``4 * ncols``. Exhaustion is reported through
        ``istop == 7`` ("iteration limit"), not raised.
    conlim : float, optional
        Stop when the condition estimate exceeds this. Disabled by default.
    callback : callable, optional
        Called as ``callback(x, itn)`` after each iteration.
    """
    if not isinstance(op, LinearOperator):
        op = LinearOperator.from_matrix(op)
    b = np.asarray(rhs, dtype=float)
    if b.shape != (op.nrows,):
        raise ValueError(f"rhs length {b.shape} does not match operator rows {op.nrows}")
    if atol <= 0 or btol <= 0:
        raise ValueError("tolerances must be positive")
    n = op.ncols
    if max_iter is None:
        max_iter = 4 * n
    ctol = 1.0 / conlim if conlim else 0.0

    u = b.copy()
    normb = np.linalg.norm(b)
    x = np.zeros(n)
    beta = normb
    if beta > 0:
        u = u / beta
        v = op.adjoint(u)
        alpha = np.linalg.norm(v)
    else:
        v = np.zeros(n)
        alpha = 0.0
    if alpha > 0:
        v = v / alpha

    zetabar = alpha * beta
    alphabar = alpha
    rho = rhobar = cbar = 1.0
    sbar = 0.0
    h = v.copy()
    hbar = np.zeros(n)

    betadd = beta
    betad = 0.0
    rhodold = 1.0
    tautildeold = 0.0
    thetatilde = 0.0
    zeta = 0.0
    d = 0.0

    norma2 = alpha * alpha
    maxrbar = 0.0
    minrbar = 1e100
    normr = beta
    normar = alpha * beta
    history = [normar]
    if normar == 0:
        return LSMRResult(x, 0, 0, normr, normar, history)

    istop = 0
    itn = 0
    while itn < max_iter:
        itn += 1
        u = op.forward(v) - alpha * u
        beta = np.linalg.norm(u)
        if beta > 0:
            u /= beta
            v = op.adjoint(u) - beta * v
            alpha = np.linalg.norm(v)
            if alpha > 0:
                v /= alpha

        rhoold = rho
        c, s, rho = _sym_ortho(alphabar, beta)
        thetanew = s * alpha
        alphabar = c * alpha

        rhobarold = rhobar
        zetaold = zeta
        thetabar = sbar * rho
        rhotemp = cbar * rho
        cbar, sbar, rhobar = _sym_ortho(cbar * rho, thetanew)
        zeta = cbar * zetabar
        zetabar = -sbar * zetabar

        hbar = h - (thetabar * rho / (rhoold * rhobarold)) * hbar
        x = x + (zeta / (rho * rhobar)) * hbar
        h = v - (thetanew / rho) * h

        # running estimate of ||r||
        betaacute = betadd
        betahat = c * betaacute
        betadd = -s * betaacute
        thetatildeold = thetatilde
        ctildeold, stildeold, rhotildeold = _sym_ortho(rhodold, thetabar)
        thetatilde = stildeold * rhobar
        rhodold = ctildeold * rhobar
        betad = -stildeold * betad + ctildeold * betahat
        tautildeold = (zetaold - thetatildeold * tautildeold) / rhotildeold
        taud = (zeta - thetatilde * tautildeold) / rhodold
        normr = math.sqrt(d + (betad - taud) ** 2 + betadd ** 2)

        # running estimates of ||A|| and cond(A)
        norma2 += beta * beta
        norma = math.sqrt(norma2)
        norma2 += alpha * alpha
        maxrbar = max(maxrbar, rhobarold)
        if itn > 1:
            minrbar = min(minrbar, rhobarold)
        conda = max(maxrbar, rhotemp) / min(minrbar, rhotemp)

        normar = abs(zetabar)
        history.append(normar)
        normx = np.linalg.norm(x)
        if callback is not None:
            callback(x, itn)

        test1 = normr / normb
        test2 = normar / (norma * normr) if norma * normr != 0 else math.inf
        test3 = 1.0 / conda
        t1 = test1 / (1.0 + norma * normx / normb)
        rtol = btol + atol * norma * normx / normb

        if itn >= max_iter:
            istop = 7
        if conlim and 1.0 + test3 <= 1.0:
            istop = 6
        if 1.0 + test2 <= 1.0:
            istop = 5
        if 1.0 + t1 <= 1.0:
            istop = 4
        if test3 <= ctol:
            istop = 3
        if test2 <= atol:
            istop = 2
        if test1 <= rtol:
            istop = 1
        if istop:
            break

    return LSMRResult(x, itn, istop, normr, normar, history)


# ----------------------------------------------------------------- thin QR


@dataclass
class QRResult:
    q: np.ndarray
    r: np.ndarray

    def __iter__(self):
        return iter((self.q, self.r))


class RankDeficiencyError(np.linalg.LinAlgError):
    pass


def mgs_thin_qr(mat, reorthogonalize=False, rank_tol=1e-12) -> QRResult:
    """Thin QR by modified Gram-Schmidt in O(nK^2).

    ``r`` has a strictly positive diagonal. A column whose residual norm falls
    below ``rank_tol`` times the largest input column norm raises
    :class:`RankDeficiencyError`. ``reorthogonalize=True`` runs a second MGS
    pass on ``q`` and folds its triangular factor into ``r``.
    """
    a = np.array(mat, dtype=float)
    if a.ndim != 2:
        raise ValueError("input must be a matrix")
    n, k = a.shape
    if k > n:
        raise ValueError(f"thin QR needs K <= n, got K={k}, n={n}")
    scale = np.max(np.linalg.norm(a, axis=0)) if k else 0.0
    q, r = _mgs(a, scale * rank_tol)
    if reorthogonalize:
        q, r2 = _mgs(q, rank_tol)
        r = r2 @ r
    return QRResult(q, r)


def _mgs(q, thresh):
    n, k = q.shape
    r = np.zeros((k, k))
    for j in range(k):
        nrm = np.linalg.norm(q[:, j])
        if not nrm > thresh:
            raise RankDeficiencyError(f"rank deficiency at column {j}")
        r[j, j] = nrm
        q[:, j] /= nrm
        if j + 1 < k:
            r[j, j + 1:] = q[:, j] @ q[:, j + 1:]
            q[:, j + 1:] -= np.outer(q[:, j], r[j, j + 1:])
    return q, r


# ----------------------------------------------------------- randomized SVD


def randomized_svd(mat, k, oversample=10, power_iters=2, seed=None):
    """Rank-``k`` truncated SVD by a randomized range finder.

    Returns ``(U, S, V)`` with ``mat ~= U @ diag(S) @ V.T``.
    """
    a = np.asarray(mat, dtype=float)
    n, q = a.shape
    if not 1 <= k <= min(n, q):
        raise ValueError(f"rank k={k} must lie in [1, {min(n, q)}]")
    rng = np.random.default_rng(seed)
    ell = min(k + oversample, min(n, q))
    omega = rng.standard_normal((q, ell))
    y, _ = np.linalg.qr(a @ omega)
    for _ in range(power_iters):
        z, _ = np.linalg.qr(a.T @ y)
        y, _ = np.linalg.qr(a @ z)
    b = y.T @ a
    ub, s, vt = np.linalg.svd(b, full_matrices=False)
    u = y @ ub[:, :k]
    return u, s[:k], vt[:k].T
