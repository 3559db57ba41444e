"""Sparse nearest-neighbor GP factors.

For ordered sites the NNGP precision is ``(I - A)^T D^{-1} (I - A)`` with
``A`` strictly lower triangular (at most ``m`` entries per row). The whitening
operator ``D^{-1/2}(I - A)`` is kept as a CSR matrix whose columns refer to
*original* site indices, so callers never permute vectors themselves.
"""

from __future__ import annotations

import csv

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .spatial import (Kernel, LocationSet, NeighborSets, Ordering, maximin_order,
                      predecessor_neighbors)

MAX_NEIGHBORS = 20
DEFAULT_NEIGHBORS = 15
JITTER = 1e-10


class NNGPFactor:
    """Row-compressed ``A`` and diagonal ``D`` of one NNGP factor.

    Attributes
    ----------
    indptr, indices, data : ndarray
        CSR storage of ``A`` in ordered positions (``indices`` are ordered
        positions of the neighbors, closest first within each row).
    d_diag : ndarray, shape (n,)
        Conditional variances, all in (0, 1] for correlation kernels.
    ordering : Ordering
    """

    def __init__(self, indptr, indices, data, d_diag, ordering: Ordering):
        self.indptr = np.asarray(indptr, dtype=np.intp)
        self.indices = np.asarray(indices, dtype=np.intp)
        self.data = np.asarray(data, dtype=float)
        self.d_diag = np.asarray(d_diag, dtype=float)
        self.ordering = ordering
        n = self.n
        perm = ordering.perm
        # whitening operator with columns mapped back to original indices
        rows = np.repeat(np.arange(n), np.diff(self.indptr))
        w = 1.0 / np.sqrt(self.d_diag)
        all_rows = np.concatenate([np.arange(n), rows])
        all_cols = np.concatenate([perm, perm[self.indices]])
        all_vals = np.concatenate([w, -self.data * w[rows]])
        self._linv = sp.csr_matrix((all_vals, (all_rows, all_cols)), shape=(n, n))
        self._linv_t = self._linv.T.tocsr()

    @property
    def n(self) -> int:
        return self.d_diag.size

    @property
    def nnz(self) -> int:
        return self.indices.size

    def row(self, i):
        """(neighbor positions, coefficients) of row ``i`` of ``A``."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def a_matrix(self):
        """``A`` as a sparse matrix in ordered positions."""
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))

    def whitening_matrix(self):
        """``D^{-1/2}(I - A) P`` as CSR, ``P`` the ordering permutation."""
        return self._linv

    def precision(self):
        """Dense NNGP precision in original site order (for checks only)."""
        w = self._linv.toarray()
        return w.T @ w

    def covariance(self):
        """Dense NNGP covariance in original site order (for checks only)."""
        n = self.n
        ima = np.eye(n) - self.a_matrix().toarray()
        inv = scipy.linalg.solve_triangular(ima, np.eye(n), lower=True)
        c_ord = inv @ np.diag(self.d_diag) @ inv.T
        out = np.empty_like(c_ord)
        perm = self.ordering.perm
        out[np.ix_(perm, perm)] = c_ord
        return out

    def to_csv(self, path):
        """Dump ``A`` as (row, col, value) in ordered positions, with the
        diagonal of ``D`` written as col = -1."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "col", "value"])
            for i in range(self.n):
                w.writerow([i, -1, repr(float(self.d_diag[i]))])
                cols, vals = self.row(i)
                for j, v in zip(cols, vals):
                    w.writerow([i, int(j), repr(float(v))])


def build_nngp_factor(locs: LocationSet, ord: Ordering, nbrs: NeighborSets,
                      kernel: Kernel) -> NNGPFactor:
    """Construct ``A`` and ``D`` row by row from local kriging systems.

    Each row solves its ``|N(i)| x |N(i)|`` neighbor system by Cholesky. A
    failing factorization is retried once with ``1e-10`` added to the
    diagonal; a non-positive conditional variance raises.
    """
    x = locs.coords[ord.perm]
    n = x.shape[0]
    if len(nbrs) != n:
        raise ValueError("neighbor sets do not match the number of sites")
    counts = np.fromiter((len(s) for s in nbrs.sets), dtype=np.intp, count=n)
    indptr = np.zeros(n + 1, dtype=np.intp)
    np.cumsum(counts, out=indptr[1:])
    indices = np.empty(indptr[-1], dtype=np.intp)
    data = np.empty(indptr[-1], dtype=float)
    d_diag = np.empty(n, dtype=float)
    for i in range(n):
        nb = np.asarray(nbrs.sets[i], dtype=np.intp)
        lo, hi = indptr[i], indptr[i + 1]
        indices[lo:hi] = nb
        if nb.size == 0:
            d_diag[i] = 1.0
            continue
        a, d = _kriging_row(kernel, x[i], x[nb], i)
        data[lo:hi] = a
        d_diag[i] = d
    return NNGPFactor(indptr, indices, data, d_diag, ord)


def _kriging_row(kernel, xi, xn, i):
    cnn = kernel.matrix(xn)
    cin = kernel.from_distance(np.sqrt(np.sum((xn - xi) ** 2, axis=1)))
    try:
        fac = scipy.linalg.cho_factor(cnn, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        try:
            fac = scipy.linalg.cho_factor(cnn + JITTER * np.eye(len(cin)), lower=True,
                                          check_finite=False)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(
                f"NNGP row {i}: neighbor correlation matrix is not positive definite") from None
    a = scipy.linalg.cho_solve(fac, cin, check_finite=False)
    d = 1.0 - a @ cin
    if not d > 0:
        raise np.linalg.LinAlgError(f"NNGP row {i}: non-positive conditional variance {d:.3g}")
    return a, d


def apply_Linv(f: NNGPFactor, v):
    """``D^{-1/2}(I - A)`` applied to ``v`` given in original site order.

    The result is indexed by ordered position; ``||result||^2 = v^T C^{-1} v``.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (f.n,):
        raise ValueError(f"length mismatch: expected {f.n}, found {v.shape}")
    return f._linv @ v


def apply_Linv_transpose_accumulate(f: NNGPFactor, v):
    """Adjoint of :func:`apply_Linv`: ``P^T (I - A)^T D^{-1/2} v``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (f.n,):
        raise ValueError(f"length mismatch: expected {f.n}, found {v.shape}")
    return f._linv_t @ v


def nngp_factors(locs: LocationSet, kernels, m: int = DEFAULT_NEIGHBORS):
    """Maximin ordering, neighbor search and one factor per kernel."""
    m = int(m)
    if m > MAX_NEIGHBORS:
        raise ValueError(f"neighbor count m={m} exceeds the cap of {MAX_NEIGHBORS}")
    order = maximin_order(locs)
    nbrs = predecessor_neighbors(locs, order, m)
    return [build_nngp_factor(locs, order, nbrs, k) for k in kernels]
