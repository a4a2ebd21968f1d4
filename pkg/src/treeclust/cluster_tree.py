"""Merge heights, split levels and pruning of cluster hierarchies.

The estimator side works on a :class:`~treeclust.dbscan.ClusterHierarchy`.
The population side sweeps a gridded density with the same union-find
engine, so both sides report splits in the same form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .dbscan import ClusterHierarchy
from .exceptions import InvalidInputError, ParameterError, UnsupportedDimensionError
from .levelset import GriddedDensity, cell_hierarchy, grid_levelset_components

__all__ = [
    "MergeEvent",
    "MergeTree",
    "SplitRecord",
    "TrueSplit",
    "SeparatorSet",
    "merge_tree",
    "merge_height",
    "extract_splits",
    "significant_splits",
    "true_split_levels",
    "delta_to_eps_sigma",
    "child_pieces",
    "estimate_cs",
]


class MergeEvent(NamedTuple):
    level: float
    a: int
    b: int


@dataclass(frozen=True, eq=False)
class MergeTree:
    """Binary merge events of a hierarchy, in the order the sweep made them.

    ``a`` and ``b`` are the smallest members of the two merged clusters.
    """

    events: tuple
    hierarchy: ClusterHierarchy

    def height(self, i: int, j: int) -> float | None:
        return self.hierarchy.merge_height(i, j)


def merge_tree(hier: ClusterHierarchy) -> MergeTree:
    return MergeTree(tuple(MergeEvent(*m) for m in hier.merges), hier)


def merge_height(hier: ClusterHierarchy, i: int, j: int) -> float | None:
    """Highest level at which ``i`` and ``j`` are active in one cluster, None if never."""
    if not (0 <= i < hier.n and 0 <= j < hier.n):
        raise InvalidInputError("index out of range")
    return hier.merge_height(i, j)


@dataclass(frozen=True)
class SplitRecord:
    """A level at which two or more clusters of a hierarchy join.

    Attributes
    ----------
    level : float
        Highest level at which the children share a cluster.
    children : tuple of int
        Cluster ids (smallest member) of the children just above ``level``.
    witnesses : tuple of int
        For each child, its point of highest activation.
    tops : tuple of float
        For each child, the highest level at which it is nonempty.
    delta : float or None
        Significance margin used for retention, unset for raw splits.
    """

    level: float
    children: tuple
    witnesses: tuple
    tops: tuple
    delta: float | None = None


def _record(level, children, delta=None) -> SplitRecord:
    return SplitRecord(
        float(level),
        tuple(int(c[0]) for c in children),
        tuple(int(c[2]) for c in children),
        tuple(float(c[1]) for c in children),
        delta,
    )


def extract_splits(hier: ClusterHierarchy) -> list[SplitRecord]:
    """Every split of the hierarchy, sorted by level."""
    return [_record(level, children) for level, children in hier.raw_splits]


def significant_splits(hier: ClusterHierarchy, delta: float) -> list[SplitRecord]:
    """Splits that persist for ``delta`` above their level.

    A split is kept when at least two of its children are still nonempty at
    ``level + delta``. The witnesses of those children are active there and
    lie in different clusters. Only the persisting children are recorded.
    """
    if not delta > 0:
        raise ParameterError("delta must be positive")
    out = []
    for level, children in hier.raw_splits:
        alive = [c for c in children if c[1] >= level + delta]
        if len(alive) >= 2:
            out.append(_record(level, alive, float(delta)))
    return out


class TrueSplit(NamedTuple):
    """A split of a gridded density.

    ``level`` is the lower of the two distinct grid values bracketing the
    split and ``upper`` the next distinct value, so the split lies in
    ``[level, upper)``. ``children`` are flat cell indices, one per child
    component, and ``tops`` the child maxima.
    """

    level: float
    upper: float
    children: tuple
    tops: tuple


def true_split_levels(gd: GriddedDensity) -> list[TrueSplit]:
    """Split levels of a gridded density over positive levels, sorted by level."""
    if min(gd.grid.step) <= 0:
        raise ParameterError("grid resolution must be positive")
    hier = cell_hierarchy(gd)
    distinct = gd.distinct
    out = []
    for level, children in hier.raw_splits:
        j = int(np.searchsorted(distinct, level, side="right"))
        upper = float(distinct[j]) if j < distinct.size else math.inf
        out.append(TrueSplit(float(level), upper, tuple(int(c[0]) for c in children), tuple(float(c[1]) for c in children)))
    return out


def child_pieces(gd: GriddedDensity, split: TrueSplit, level: float) -> list[list[np.ndarray]]:
    """Face-connected pieces of ``{p >= level}`` inside each child of ``split``.

    Returns one list per child, each holding boolean cell masks. ``level``
    must lie above the split.
    """
    if gd.dim > 2:
        raise UnsupportedDimensionError("grid components are restricted to d <= 2")
    if not level >= split.upper:
        raise ParameterError("level must lie above the split")
    structure = ndimage.generate_binary_structure(gd.dim, 1)
    above, _ = ndimage.label(gd.values >= split.upper, structure=structure)
    above = above.ravel()
    child_label = [int(above[c]) for c in split.children]
    pieces = grid_levelset_components(gd, level).grid_labels.ravel()
    out: list[list[np.ndarray]] = [[] for _ in split.children]
    ids = np.unique(pieces[pieces > 0])
    if ids.size == 0:
        return out
    first = np.array([np.flatnonzero(pieces == i)[0] for i in ids])
    for i, cell in zip(ids, first):
        host = int(above[cell])
        if host in child_label:
            out[child_label.index(host)].append((pieces == i).reshape(gd.grid.shape))
    return out


class SeparatorSet(NamedTuple):
    """Sublevel set ``{p <= threshold}`` separating two clusters."""

    threshold: float


def delta_to_eps_sigma(delta: float, lam: float, L: float, alpha: float) -> tuple[SeparatorSet, float, float]:
    """Convert a density margin into a relative gap and a separation distance.

    Returns the separator ``{p <= lam - delta}``, ``eps = delta / (3 lam)``
    and ``sigma = (delta / (3 L))^(1 / alpha)``.
    """
    if not 0 < alpha <= 1:
        raise ParameterError("the conversion is only available for alpha in (0, 1]")
    if not 0 < delta < lam:
        raise ParameterError("need 0 < delta < lam")
    if not L > 0:
        raise ParameterError("L must be positive")
    eps = delta / (3.0 * lam)
    sigma = (delta / (3.0 * L)) ** (1.0 / alpha)
    return SeparatorSet(lam - delta), eps, sigma


def _mask_distance(a: np.ndarray, b: np.ndarray, step) -> float:
    dist = ndimage.distance_transform_edt(~a, sampling=step)
    return float(dist[b].min())


def estimate_cs(gd: GriddedDensity, split: TrueSplit, alpha: float, deltas) -> float:
    """Grid estimate of the separation constant of a split.

    For each margin in ``deltas`` the pieces of ``{p >= level + margin}``
    belonging to different children are measured apart, and the ratio of
    that distance to ``margin^(1/alpha)`` is minimized over the margins.
    """
    best = math.inf
    for delta in deltas:
        level = split.level + delta
        if level < split.upper:
            continue
        groups = child_pieces(gd, split, level)
        masks = [np.any(np.stack(g), axis=0) for g in groups if g]
        if len(masks) < 2:
            continue
        for i in range(len(masks)):
            for j in range(i + 1, len(masks)):
                dist = _mask_distance(masks[i], masks[j], gd.grid.step)
                best = min(best, dist / delta ** (1.0 / alpha))
    return best
