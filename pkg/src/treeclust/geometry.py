"""Point storage, fixed-radius neighbour search and graph connectivity.

The neighbour index hashes points into a uniform grid whose cell size equals
the query radius (dimensions up to three) and falls back to a k-d tree in
higher dimensions. All distance predicates are evaluated on exact floating
point distances with no tolerance.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .exceptions import InvalidInputError

__all__ = [
    "Dataset",
    "NeighborIndex",
    "UnionFind",
    "as_points",
    "radius_neighbors",
    "epsilon_graph_components",
]

_GRID_MAX_DIM = 3
_KEY_BITS = 20
_CHUNK = 4096


def as_points(x, dim: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a finite float array of shape (m, dim).

    A 1-d input is read as a single point when ``dim`` is given and larger
    than one, otherwise as a column of scalar points.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        if dim is not None and dim > 1:
            arr = arr.reshape(1, -1)
        else:
            arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise InvalidInputError(f"expected points of rank at most 2, got rank {arr.ndim}")
    if dim is not None and arr.shape[1] != dim:
        raise InvalidInputError(f"dimension mismatch: expected {dim}, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("points must be finite")
    return arr


def _distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a - b
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


class NeighborIndex:
    """Fixed-radius neighbour queries over an immutable point array.

    Parameters
    ----------
    points : ndarray of shape (n, d)
        Indexed points. The array is not copied and must not be mutated.
    backend : {"grid", "kdtree"}, optional
        Search structure. Defaults to ``"grid"`` for ``d <= 3``.
    """

    def __init__(self, points: np.ndarray, backend: str | None = None):
        self.points = points
        self.n, self.dim = points.shape
        if backend is None:
            backend = "grid" if self.dim <= _GRID_MAX_DIM else "kdtree"
        if backend not in ("grid", "kdtree"):
            raise InvalidInputError(f"unknown backend {backend!r}")
        if backend == "grid" and self.dim > _GRID_MAX_DIM:
            raise InvalidInputError("grid backend supports at most 3 dimensions")
        self.backend = backend
        self._grids: dict[float, tuple] = {}
        self._tree: cKDTree | None = None

    # -- candidate generation -------------------------------------------------

    def _grid(self, cell: float):
        cached = self._grids.get(cell)
        if cached is not None:
            return cached
        origin = self.points.min(axis=0)
        coords = np.floor((self.points - origin) / cell)
        if coords.max(initial=0) >= 2 ** (_KEY_BITS - 1) - 2:
            return None
        coords = coords.astype(np.int64)
        keys = self._encode(coords)
        perm = np.argsort(keys, kind="stable")
        entry = (origin, keys[perm], perm, coords.max(axis=0))
        if len(self._grids) > 4:
            self._grids.clear()
        self._grids[cell] = entry
        return entry

    def _encode(self, coords: np.ndarray) -> np.ndarray:
        offset = 2 ** (_KEY_BITS - 1)
        key = np.zeros(coords.shape[0], dtype=np.int64)
        for j in range(self.dim):
            key |= (coords[:, j] + offset) << (_KEY_BITS * j)
        return key

    def _grid_candidates(self, queries: np.ndarray, cell: float, grid, half: bool = False):
        origin, skeys, perm, cmax = grid
        qc = np.floor((queries - origin) / cell)
        qc = np.clip(qc, -1, cmax + 1).astype(np.int64)
        shifts = np.array(np.meshgrid(*([[-1, 0, 1]] * self.dim), indexing="ij"))
        shifts = shifts.reshape(self.dim, -1).T
        if half:
            # one of each pair of opposite shifts; the zero shift is filtered by index order
            shifts = shifts[len(shifts) // 2:]
        qi_parts, di_parts = [], []
        base = np.arange(queries.shape[0])
        for s in shifts:
            keys = self._encode(qc + s)
            lo = np.searchsorted(skeys, keys, side="left")
            hi = np.searchsorted(skeys, keys, side="right")
            cnt = hi - lo
            total = int(cnt.sum())
            if total == 0:
                continue
            qi = np.repeat(base, cnt)
            within = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            qi_parts.append(qi)
            di_parts.append(perm[np.repeat(lo, cnt) + within])
        if not qi_parts:
            return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
        return np.concatenate(qi_parts), np.concatenate(di_parts)

    def _tree_candidates(self, queries: np.ndarray, r: float):
        if self._tree is None:
            self._tree = cKDTree(self.points)
        # widen slightly so that the exact predicate below decides boundary cases
        lists = self._tree.query_ball_point(queries, r * (1 + 1e-9) + 1e-300)
        cnt = np.fromiter((len(x) for x in lists), dtype=np.intp, count=len(lists))
        qi = np.repeat(np.arange(len(lists)), cnt)
        di = np.fromiter((j for x in lists for j in x), dtype=np.intp, count=int(cnt.sum()))
        return qi, di

    def _candidates(self, queries: np.ndarray, r: float, half: bool = False):
        if self.backend == "grid":
            grid = self._grid(r)
            if grid is not None:
                qi, di = self._grid_candidates(queries, r, grid, half)
                return qi, di, not half
        qi, di = self._tree_candidates(queries, r)
        return qi, di, True

    # -- public queries ---------------------------------------------------------

    def pairs(
        self,
        queries: np.ndarray,
        r: float,
        strict: bool = False,
        metric: str = "euclidean",
        sort: bool = True,
        _self_keys: np.ndarray | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """All (query, point) index pairs within distance ``r``.

        Parameters
        ----------
        queries : ndarray of shape (m, d)
        r : float
            Search radius.
        strict : bool
            Use ``< r`` instead of ``<= r``.
        metric : {"euclidean", "chebyshev"}
            Distance used by the predicate.
        sort : bool
            Sort the result by query then point index.

        Returns
        -------
        qi, di : ndarray of int
            Matching query and point indices.
        """
        if r <= 0:
            raise InvalidInputError("radius must be positive")
        queries = as_points(queries, self.dim)
        search_r = r * np.sqrt(self.dim) if metric == "chebyshev" else r
        out_q, out_d = [], []
        for start in range(0, queries.shape[0], _CHUNK):
            chunk = queries[start:start + _CHUNK]
            qi, di, full = self._candidates(chunk, search_r, half=_self_keys is not None)
            if _self_keys is not None:
                # self join: keep each unordered pair once
                gq = qi + start
                keep = gq < di if full else ((gq != di) & ((gq < di) | (_self_keys[gq] != _self_keys[di])))
                qi, di = qi[keep], di[keep]
            if metric == "chebyshev" or self.dim == 1:
                dist = np.abs(chunk[qi] - self.points[di]).max(axis=1)
            else:
                dist = _distances(chunk[qi], self.points[di])
            keep = dist < r if strict else dist <= r
            qi, di = qi[keep] + start, di[keep]
            if sort:
                order = np.lexsort((di, qi))
                qi, di = qi[order], di[order]
            out_q.append(qi)
            out_d.append(di)
        if not out_q:
            return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
        return np.concatenate(out_q), np.concatenate(out_d)

    def counts(self, queries: np.ndarray, r: float, strict: bool = False) -> np.ndarray:
        """Number of indexed points within ``r`` of each query point."""
        queries = as_points(queries, self.dim)
        qi, _ = self.pairs(queries, r, strict=strict, sort=False)
        return np.bincount(qi, minlength=queries.shape[0])

    def any_within(self, queries: np.ndarray, r: float) -> np.ndarray:
        """Whether each query has an indexed point within the closed radius ``r``.

        Suited to many queries against few points. Nearest neighbours come
        from a k-d tree; queries whose nearest distance is within rounding of
        ``r`` are re-decided by the exact predicate of :meth:`pairs`.
        """
        if r <= 0:
            raise InvalidInputError("radius must be positive")
        queries = as_points(queries, self.dim)
        if self.n == 0:
            return np.zeros(queries.shape[0], dtype=bool)
        if self._tree is None:
            self._tree = cKDTree(self.points)
        dist, _ = self._tree.query(queries, distance_upper_bound=r * (1 + 1e-9) + 1e-300)
        out = dist <= r * (1 - 1e-9)
        close = np.flatnonzero(np.isfinite(dist) & ~out)
        if close.size:
            qi, _ = self.pairs(queries[close], r, sort=False)
            out[close[np.unique(qi)]] = True
        return out

    def self_pairs(self, r: float, strict: bool = False, sort: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Unordered index pairs of indexed points within distance ``r``, as ``i < j``."""
        grid = self._grid(r) if self.backend == "grid" else None
        keys = np.zeros(self.n, dtype=np.int64)
        if grid is not None:
            keys = self._encode(np.floor((self.points - grid[0]) / r).astype(np.int64))
        qi, di = self.pairs(self.points, r, strict=strict, sort=False, _self_keys=keys)
        lo, hi = np.minimum(qi, di), np.maximum(qi, di)
        if sort:
            order = np.lexsort((hi, lo))
            lo, hi = lo[order], hi[order]
        return lo, hi


class Dataset:
    """Immutable ordered sample of points in R^d.

    Parameters
    ----------
    points : array-like of shape (n, d) or (n,)
        Sample coordinates. A 1-d array is read as n scalar points.

    Attributes
    ----------
    points : ndarray of shape (n, d)
        Read-only copy of the coordinates.
    n : int
    dim : int
    """

    def __init__(self, points):
        arr = np.array(as_points(points), dtype=float, copy=True)
        if arr.shape[0] < 1:
            raise InvalidInputError("a dataset needs at least one point")
        if arr.shape[1] < 1:
            raise InvalidInputError("points need at least one coordinate")
        arr.setflags(write=False)
        self._points = arr
        self._index: NeighborIndex | None = None

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def n(self) -> int:
        return self._points.shape[0]

    @property
    def dim(self) -> int:
        return self._points.shape[1]

    @property
    def index(self) -> NeighborIndex:
        if self._index is None:
            self._index = NeighborIndex(self._points)
        return self._index

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, dim={self.dim})"


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n
        self.count = n

    def find(self, i: int) -> int:
        parent = self.parent
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(self, i: int, j: int) -> int | None:
        """Merge the sets of ``i`` and ``j``; return the new root or None if already joined."""
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return None
        if self.size[ri] < self.size[rj]:
            ri, rj = rj, ri
        self.parent[rj] = ri
        self.size[ri] += self.size[rj]
        self.count -= 1
        return ri


def radius_neighbors(ds: Dataset, center, r: float) -> np.ndarray:
    """Sorted indices of sample points in the closed ball ``B(center, r)``."""
    c = as_points(center, ds.dim)
    if c.shape[0] != 1:
        raise InvalidInputError("center must be a single point")
    _, di = ds.index.pairs(c, r)
    return di


def _partition(labels: np.ndarray, members: np.ndarray) -> list[np.ndarray]:
    order = np.lexsort((members, labels))
    lab, mem = labels[order], members[order]
    cuts = np.flatnonzero(np.diff(lab)) + 1
    blocks = np.split(mem, cuts)
    blocks.sort(key=lambda b: b[0])
    return blocks


def epsilon_graph_components(
    ds: Dataset,
    active: Iterable[int] | np.ndarray,
    threshold: float,
    strict: bool = True,
) -> list[np.ndarray]:
    """Connected components of the threshold graph on the active points.

    Parameters
    ----------
    ds : Dataset
    active : array-like of int
        Indices of the nodes.
    threshold : float
        Edge length bound.
    strict : bool, default True
        Join points at distance ``< threshold`` when True, ``<= threshold`` otherwise.

    Returns
    -------
    list of ndarray
        Blocks of sorted indices, ordered by their smallest member.
    """
    if threshold <= 0:
        raise InvalidInputError("threshold must be positive")
    act = np.unique(np.asarray(list(active) if not isinstance(active, np.ndarray) else active, dtype=np.intp))
    if act.size == 0:
        return []
    if act[0] < 0 or act[-1] >= ds.n:
        raise InvalidInputError("active indices out of range")
    sub = ds.points[act]
    index = ds.index if act.size == ds.n else NeighborIndex(sub)
    i, j = index.self_pairs(threshold, strict=strict)
    m = act.size
    graph = sparse.coo_matrix((np.ones(i.size, dtype=np.int8), (i, j)), shape=(m, m))
    _, labels = connected_components(graph, directed=False)
    return _partition(labels, act)
