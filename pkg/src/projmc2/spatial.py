"""Spatial sites, maximin ordering, exact predecessor neighbor search and
correlation kernels."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


class LocationSet:
    """Finite set of distinct sites in R^d.

    Parameters
    ----------
    coords : array_like, shape (n, d)
        Site coordinates. Rows must be finite and pairwise distinct.
    """

    def __init__(self, coords):
        coords = np.array(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.ndim != 2:
            raise ValueError("coordinates must be an n x d matrix")
        if coords.shape[0] == 0:
            raise ValueError("empty location set")
        if coords.shape[1] == 0:
            raise ValueError("spatial dimension must be at least 1")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coordinates must be finite")
        uniq = np.unique(coords, axis=0)
        if uniq.shape[0] != coords.shape[0]:
            raise ValueError("duplicate locations are not allowed")
        coords.setflags(write=False)
        self.coords = coords

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def d(self) -> int:
        return self.coords.shape[1]

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"LocationSet(n={self.n}, d={self.d})"


@dataclass(frozen=True)
class Ordering:
    """Permutation mapping ordered position -> original site index."""

    perm: np.ndarray

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.intp)
        if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise ValueError("ordering must be a permutation of 0..n-1")
        perm.setflags(write=False)
        object.__setattr__(self, "perm", perm)

    @property
    def n(self) -> int:
        return self.perm.size

    def inverse(self) -> np.ndarray:
        """Original index -> ordered position."""
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return inv


@dataclass(frozen=True)
class NeighborSets:
    """Per ordered position, the ordered positions of its nearest predecessors,
    closest first."""

    sets: tuple
    m: int

    def __len__(self):
        return len(self.sets)

    def __getitem__(self, i):
        return self.sets[i]

    def total(self) -> int:
        return sum(len(s) for s in self.sets)


@dataclass(frozen=True)
class Kernel:
    """Isotropic correlation kernel. Only the exponential family is provided."""

    decay: float
    family: str = "exponential"

    def __post_init__(self):
        if self.family != "exponential":
            raise ValueError(f"unsupported kernel family {self.family!r}")
        if not (np.isfinite(self.decay) and self.decay > 0):
            raise ValueError("kernel decay must be positive")

    def from_distance(self, dist):
        return np.exp(-self.decay * np.asarray(dist, dtype=float))

    def matrix(self, a, b=None):
        """Cross-correlation matrix between the rows of ``a`` and ``b``."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = a if b is None else np.atleast_2d(np.asarray(b, dtype=float))
        return self.from_distance(pairwise_distances(a, b))


def pairwise_distances(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def correlation(kernel: Kernel, s, s_prime) -> float:
    """Correlation between two points, ``exp(-decay * ||s - s'||)``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    s_prime = np.atleast_1d(np.asarray(s_prime, dtype=float))
    dist = np.sqrt(np.sum((s - s_prime) ** 2))
    return float(kernel.from_distance(dist))


def maximin_order(locs: LocationSet) -> Ordering:
    """Maximin ordering of the sites.

    The first site is the one closest to the coordinate centroid. Each later
    site maximizes its minimum distance to the sites already placed. Exact
    ties go to the smallest original index. Cost is O(n^2) time, O(n) memory.
    """
    x = locs.coords
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty location set")
    centroid = x.mean(axis=0)
    first = int(np.argmin(np.sum((x - centroid) ** 2, axis=1)))
    perm = np.empty(n, dtype=np.intp)
    perm[0] = first
    mind = np.sqrt(np.sum((x - x[first]) ** 2, axis=1))
    placed = np.zeros(n, dtype=bool)
    placed[first] = True
    mind[first] = -np.inf
    for pos in range(1, n):
        # argmax returns the first occurrence, i.e. the smallest original index
        nxt = int(np.argmax(mind))
        perm[pos] = nxt
        placed[nxt] = True
        dnew = np.sqrt(np.sum((x - x[nxt]) ** 2, axis=1))
        np.minimum(mind, dnew, out=mind)
        mind[placed] = -np.inf
    return Ordering(perm)


def predecessor_neighbors(locs: LocationSet, ord: Ordering, m: int) -> NeighborSets:
    """Exact ``min(i, m)`` nearest predecessors of every ordered position.

    A KD-tree proposes candidates; a candidate list is accepted only once it
    provably contains every predecessor within the m-th neighbor distance,
    otherwise the query widens. Ties go to the smallest original index.
    """
    m = int(m)
    if m < 1:
        raise ValueError("neighbor count m must be >= 1")
    x = locs.coords[ord.perm]
    orig = ord.perm
    n = x.shape[0]
    sets: list = [()] * n
    if n == 1:
        return NeighborSets(tuple(sets), m)

    # small prefix: brute force
    head = min(n, 2 * m + 2)
    for i in range(1, head):
        sets[i] = _brute_predecessors(x, orig, i, m)
    if head == n:
        return NeighborSets(tuple(sets), m)

    tree = cKDTree(x)
    pending = np.arange(head, n)
    k = min(n, 2 * m + 1)
    while pending.size:
        _, idx = tree.query(x[pending], k=k)
        idx = np.atleast_2d(idx)
        retry = []
        for row, i in enumerate(pending):
            cand = idx[row]
            cand = cand[(cand < i)]
            if cand.size < m:
                retry.append(i)
                continue
            dist = np.sqrt(np.sum((x[cand] - x[i]) ** 2, axis=1))
            order = np.lexsort((orig[cand], dist))
            dm = dist[order[m - 1]]
            kth = np.sqrt(np.sum((x[idx[row, -1]] - x[i]) ** 2))
            if k < n and not kth > dm:
                # a point tied with the m-th distance may lie beyond the query
                retry.append(i)
                continue
            sets[i] = tuple(int(j) for j in cand[order[:m]])
        pending = np.asarray(retry, dtype=np.intp)
        if pending.size:
            if k >= n:
                for i in pending:
                    sets[i] = _brute_predecessors(x, orig, int(i), m)
                break
            k = min(n, 2 * k)
    return NeighborSets(tuple(sets), m)


def _brute_predecessors(x, orig, i, m):
    dist = np.sqrt(np.sum((x[:i] - x[i]) ** 2, axis=1))
    order = np.lexsort((orig[:i], dist))
    return tuple(int(j) for j in order[: min(i, m)])


def read_locations_csv(path) -> LocationSet:
    """Read a ``x1..xd`` header CSV into a LocationSet."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        expected = [f"x{j + 1}" for j in range(len(header))]
        if [h.strip() for h in header] != expected:
            raise ValueError(f"{path}:1: expected header {','.join(expected)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise ValueError("empty location set")
    return LocationSet(np.array(rows))


def write_locations_csv(path, locs: LocationSet):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j + 1}" for j in range(locs.d)])
        for row in locs.coords:
            w.writerow([repr(float(v)) for v in row])
