"""Density-based cluster hierarchies over a sample.

Two builders share one engine. :func:`dbscan_hierarchy` thresholds closed
ball counts and links points closer than twice the bandwidth.
:func:`modified_dbscan_hierarchy` thresholds a kernel estimate and links
points at distance at most twice the bandwidth.

The engine reduces the threshold graph to a maximum spanning forest
(edge weight = the lower activation level of its endpoints) and sweeps it
once from the highest level down with a union-find. Each merging union is
recorded, and the sample is laid out in dendrogram leaf order, so that any
partition of the hierarchy is a set of contiguous runs of that order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import minimum_spanning_tree

from .exceptions import InvalidInputError, NoContainingClusterError, ParameterError
from .geometry import Dataset
from .kde import SPHERICAL, Kernel, kde_at, unit_ball_volume

__all__ = [
    "HierarchyLevel",
    "ClusterHierarchy",
    "build_hierarchy",
    "dbscan_hierarchy",
    "modified_dbscan_hierarchy",
    "lambda_of_k",
    "smallest_containing_cluster",
]


def lambda_of_k(k: int, n: int, h: float, d: int) -> float:
    """Density level ``k / (n h^d V_d)`` matching a ball-count threshold."""
    if not 0 <= k <= n:
        raise ParameterError("k must lie in 0..n")
    return k / (n * h ** d * unit_ball_volume(d))


@dataclass(frozen=True, eq=False)
class HierarchyLevel:
    """One stored level of a hierarchy.

    Attributes
    ----------
    level : float
        Density threshold of the level.
    k : int or None
        Smallest ball count of the active points (count-based hierarchies only).
    active : ndarray of int
        Sorted active sample indices.
    clusters : list of ndarray
        Partition of ``active``, each block sorted, ordered by smallest member.
    """

    level: float
    k: int | None
    active: np.ndarray
    clusters: list


def _max_spanning_forest(n: int, u: np.ndarray, v: np.ndarray, w: np.ndarray):
    # scipy minimises and drops zero weights, so rank levels into positive integers
    uniq, rank = np.unique(w, return_inverse=True)
    weight = (uniq.size - rank).astype(float)
    graph = sparse.coo_matrix((weight, (u, v)), shape=(n, n)).tocsr()
    forest = minimum_spanning_tree(graph).tocoo()
    fu, fv = forest.row.astype(np.intp), forest.col.astype(np.intp)
    fw = uniq[uniq.size - forest.data.astype(np.intp)]
    return fu, fv, fw


def _sweep(activation: np.ndarray, u: np.ndarray, v: np.ndarray, w: np.ndarray):
    """Descending-level union-find sweep.

    Returns the leaf order, the gap (merge level) between consecutive leaves,
    the merge events and the raw split records.
    """
    n = activation.size
    order_e = np.lexsort((v, u, -w))
    eu, ev, ew = u[order_e].tolist(), v[order_e].tolist(), w[order_e].tolist()

    parent = list(range(n))
    size = [1] * n
    minid = list(range(n))
    top = activation.tolist()
    arg = list(range(n))
    head = list(range(n))
    tail = list(range(n))
    nxt = [-1] * n
    gap_after = [-math.inf] * n
    merges: list[tuple[float, int, int]] = []
    splits: list[tuple[float, list]] = []

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def flush(level, touched):
        for children in touched.values():
            if len(children) >= 2:
                splits.append((level, sorted(children)))

    touched: dict[int, list] = {}
    cur = None
    for a, b, lev in zip(eu, ev, ew):
        if lev != cur:
            if touched:
                flush(cur, touched)
            touched = {}
            cur = lev
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        ca = touched.pop(ra, None)
        if ca is None:
            ca = [(minid[ra], top[ra], arg[ra])] if top[ra] > lev else []
        cb = touched.pop(rb, None)
        if cb is None:
            cb = [(minid[rb], top[rb], arg[rb])] if top[rb] > lev else []
        if minid[ra] > minid[rb]:
            ra, rb = rb, ra
        # left block keeps the smaller canonical id
        nxt[tail[ra]] = head[rb]
        gap_after[tail[ra]] = lev
        new_head, new_tail, new_min = head[ra], tail[rb], minid[ra]
        merges.append((lev, minid[ra], minid[rb]))
        if size[ra] < size[rb]:
            root, other = rb, ra
        else:
            root, other = ra, rb
        parent[other] = root
        size[root] += size[other]
        head[root], tail[root], minid[root] = new_head, new_tail, new_min
        if top[other] > top[root] or (top[other] == top[root] and arg[other] < arg[root]):
            top[root], arg[root] = top[other], arg[other]
        touched[root] = ca + cb
    if touched:
        flush(cur, touched)

    roots = sorted({find(i) for i in range(n)}, key=lambda r: minid[r])
    order = []
    for r in roots:
        i = head[r]
        while i != -1:
            order.append(i)
            i = nxt[i]
    order = np.asarray(order, dtype=np.intp)
    gaps = np.asarray(gap_after, dtype=float)[order[:-1]]
    splits.reverse()
    return order, gaps, merges, splits


class ClusterHierarchy:
    """Nested family of clusterings indexed by a density level.

    A point is active at level ``lam`` when its activation is at least
    ``lam``; two active points share a cluster when the smallest merge level
    between them along the leaf order is at least ``lam``. Levels increase
    with density; stored levels are the distinct activation and merge values.

    Parameters
    ----------
    activation : ndarray of shape (n,)
        Highest level at which each point is active; ``-inf`` for points
        that are never active.
    order : ndarray of shape (n,)
        Dendrogram leaf order.
    gaps : ndarray of shape (n - 1,)
        Merge level between consecutive leaves; ``-inf`` across trees.
    merges : list of (level, a, b)
        Merging unions in sweep order, ids canonical at the time of merging.
    raw_splits : list of (level, children)
        Levels where two or more pre-existing clusters first share a cluster.
        Each child is ``(cluster id, top level, witness index)``.
    h : float
    kernel : Kernel
    algorithm : str
    counts : ndarray of int, optional
        Ball counts behind ``activation`` for count-based hierarchies.
    dim : int, optional
    """

    def __init__(
        self,
        activation: np.ndarray,
        order: np.ndarray,
        gaps: np.ndarray,
        merges: list,
        raw_splits: list,
        *,
        h: float,
        kernel: Kernel,
        algorithm: str,
        counts: np.ndarray | None = None,
        dim: int | None = None,
    ):
        self.activation = np.asarray(activation, dtype=float)
        self.order = np.asarray(order, dtype=np.intp)
        self.gaps = np.asarray(gaps, dtype=float)
        self.merges = list(merges)
        self.raw_splits = list(raw_splits)
        self.h = float(h)
        self.kernel = kernel
        self.algorithm = algorithm
        self.counts = None if counts is None else np.asarray(counts, dtype=np.int64)
        self.dim = dim
        self.n = self.activation.size
        self.position = np.empty(self.n, dtype=np.intp)
        self.position[self.order] = np.arange(self.n)
        finite = np.concatenate([self.activation, self.gaps])
        self.levels = np.unique(finite[np.isfinite(finite)])
        for arr in (self.activation, self.order, self.gaps, self.position, self.levels):
            arr.setflags(write=False)

    def __repr__(self) -> str:
        return f"ClusterHierarchy(algorithm={self.algorithm!r}, n={self.n}, levels={self.levels.size})"

    # -- level queries --------------------------------------------------------

    def labels_at(self, level: float) -> np.ndarray:
        """Cluster id of every point at ``level`` (its smallest member), ``-1`` if inactive."""
        act = self.activation[self.order] >= level
        start = np.ones(self.n, dtype=bool)
        start[1:] = ~(self.gaps >= level)
        starts = np.flatnonzero(start)
        block_min = np.minimum.reduceat(self.order, starts)
        block = np.cumsum(start) - 1
        lab = np.where(act, block_min[block], -1)
        out = np.empty(self.n, dtype=np.intp)
        out[self.order] = lab
        return out

    def active_at(self, level: float) -> np.ndarray:
        return np.flatnonzero(self.activation >= level)

    def clusters_at(self, level: float) -> list[np.ndarray]:
        """Clusters at ``level`` as sorted index arrays ordered by smallest member."""
        lab = self.labels_at(level)
        idx = np.flatnonzero(lab >= 0)
        if idx.size == 0:
            return []
        order = np.lexsort((idx, lab[idx]))
        idx = idx[order]
        cuts = np.flatnonzero(np.diff(lab[idx])) + 1
        return np.split(idx, cuts)

    def stored_level(self, level: float) -> float | None:
        """Smallest stored level at or above ``level``; None when the level is empty."""
        j = int(np.searchsorted(self.levels, level, side="left"))
        return None if j == self.levels.size else float(self.levels[j])

    def level_of_k(self, k: int) -> float:
        """Density level equivalent to the ball-count threshold ``k``."""
        if self.dim is None:
            raise ParameterError("hierarchy has no dimension attached")
        return lambda_of_k(k, self.n, self.h, self.dim)

    def k_map(self) -> np.ndarray:
        """Stored level index for every ``k`` in ``0..n`` (``-1`` for empty levels)."""
        lam = np.array([self.level_of_k(k) for k in range(self.n + 1)])
        j = np.searchsorted(self.levels, lam, side="left")
        return np.where(j < self.levels.size, j, -1)

    def level(self, j: int) -> HierarchyLevel:
        """The ``j``-th stored level in increasing order."""
        lam = float(self.levels[j])
        active = self.active_at(lam)
        k = None
        if self.counts is not None:
            k = int(self.counts[active].min()) if active.size else None
        return HierarchyLevel(lam, k, active, self.clusters_at(lam))

    def __iter__(self) -> Iterator[HierarchyLevel]:
        for j in range(self.levels.size):
            yield self.level(j)

    def __len__(self) -> int:
        return int(self.levels.size)

    # -- merge structure --------------------------------------------------------

    def merge_height(self, i: int, j: int) -> float | None:
        """Highest level at which ``i`` and ``j`` share a cluster, None if never."""
        if i == j:
            a = float(self.activation[i])
            return a if math.isfinite(a) else None
        lo, hi = sorted((int(self.position[i]), int(self.position[j])))
        m = float(self.gaps[lo:hi].min())
        return m if math.isfinite(m) else None

    def set_merge_height(self, indices: Sequence[int] | np.ndarray) -> float | None:
        """Highest level at which all ``indices`` share one cluster, None if never."""
        idx = np.asarray(indices, dtype=np.intp).ravel()
        if idx.size == 0:
            raise InvalidInputError("index set must be nonempty")
        pos = self.position[idx]
        lo, hi = int(pos.min()), int(pos.max())
        m = float(self.activation[idx].min())
        if hi > lo:
            m = min(m, float(self.gaps[lo:hi].min()))
        return m if math.isfinite(m) else None

    def cluster_span(self, indices, level: float) -> tuple[int, int]:
        """Leaf-order range ``[a, b]`` of the cluster at ``level`` containing ``indices``."""
        pos = self.position[np.asarray(indices, dtype=np.intp).ravel()]
        lo, hi = int(pos.min()), int(pos.max())
        left = np.flatnonzero(self.gaps[:lo] < level)
        right = np.flatnonzero(self.gaps[hi:] < level)
        a = int(left[-1]) + 1 if left.size else 0
        b = hi + int(right[0]) if right.size else self.n - 1
        return a, b

    def nesting_violations(self) -> int:
        """Number of clusters that are not contained in exactly one cluster one level down."""
        bad = 0
        prev = None
        image = np.empty(self.n, dtype=np.intp)
        for lam in self.levels[::-1]:
            lab = self.labels_at(float(lam))
            if prev is not None:
                act = prev >= 0
                upper, lower = prev[act], lab[act]
                image[upper] = lower
                broken = (lower < 0) | (image[upper] != lower)
                bad += np.unique(upper[broken]).size
            prev = lab
        return bad


def build_hierarchy(
    activation: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
    *,
    weights: np.ndarray | None = None,
    **meta,
) -> ClusterHierarchy:
    """Sweep a threshold graph into a :class:`ClusterHierarchy`.

    Parameters
    ----------
    activation : ndarray of shape (n,)
        Activation level of each node, ``-inf`` for nodes never active.
    u, v : ndarray of int
        Edge endpoints.
    weights : ndarray, optional
        Level at which each edge appears; defaults to the smaller endpoint
        activation. Must not exceed that value.
    **meta
        Passed through to :class:`ClusterHierarchy`.
    """
    activation = np.asarray(activation, dtype=float)
    u = np.asarray(u, dtype=np.intp)
    v = np.asarray(v, dtype=np.intp)
    w = np.minimum(activation[u], activation[v]) if weights is None else np.asarray(weights, dtype=float)
    keep = np.isfinite(w)
    u, v, w = u[keep], v[keep], w[keep]
    n = activation.size
    if u.size > 2 * n:
        u, v, w = _max_spanning_forest(n, u, v, w)
    order, gaps, merges, splits = _sweep(activation, u, v, w)
    return ClusterHierarchy(activation, order, gaps, merges, splits, **meta)


def dbscan_hierarchy(ds: Dataset, h: float) -> ClusterHierarchy:
    """Hierarchy over ball-count thresholds ``k = 0..n`` with strict ``2h`` links."""
    if not h > 0:
        raise ParameterError("bandwidth must be positive")
    counts = ds.index.counts(ds.points, h)
    activation = counts / (ds.n * h ** ds.dim * unit_ball_volume(ds.dim))
    u, v = ds.index.self_pairs(2 * h, strict=True, sort=False)
    return build_hierarchy(
        activation, u, v, h=h, kernel=SPHERICAL, algorithm="dbscan", counts=counts, dim=ds.dim
    )


def modified_dbscan_hierarchy(ds: Dataset, kernel: Kernel, h: float) -> ClusterHierarchy:
    """Hierarchy over density thresholds ``lam >= 0`` of a kernel estimate, non-strict ``2h`` links.

    Points whose estimate is negative are never active.
    """
    if not h > 0:
        raise ParameterError("bandwidth must be positive")
    values = np.asarray(kde_at(ds, kernel, ds.points, h), dtype=float)
    activation = np.where(values >= 0, values, -np.inf)
    u, v = ds.index.self_pairs(2 * h, strict=False, sort=False)
    return build_hierarchy(activation, u, v, h=h, kernel=kernel, algorithm="mdbscan", dim=ds.dim)


def smallest_containing_cluster(hier: ClusterHierarchy, indices) -> tuple[float, int]:
    """Level and id of the smallest cluster containing all ``indices``.

    Raises
    ------
    NoContainingClusterError
        If the indices never share a cluster.
    """
    m = hier.set_merge_height(indices)
    if m is None:
        raise NoContainingClusterError("indices never share a cluster")
    a, b = hier.cluster_span(indices, m)
    return m, int(hier.order[a:b + 1].min())
