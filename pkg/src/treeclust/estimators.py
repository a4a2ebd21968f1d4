"""Scikit-learn style wrappers around the hierarchy and level-set builders."""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .cluster_tree import extract_splits, significant_splits
from .dbscan import ClusterHierarchy, dbscan_hierarchy, modified_dbscan_hierarchy
from .exceptions import InvalidInputError, ParameterError
from .geometry import Dataset, NeighborIndex
from .kde import SPHERICAL, build_valid_kernel, kde_at, optimal_bandwidth, unit_ball_volume
from .levelset import ceil_count, devroye_wise

__all__ = [
    "DBSCANClusterTree",
    "ModifiedDBSCANClusterTree",
    "KernelDensityEstimator",
    "DevroyeWiseLevelSet",
]


def _check_X(X, n_features: int | None = None) -> np.ndarray:
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if n_features is not None and X.shape[1] != n_features:
        raise InvalidInputError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


def _resolve_bandwidth(h, n: int, d: int, alpha: float, bandwidth_c: float) -> float:
    if h is not None:
        if not h > 0:
            raise ParameterError("h must be positive")
        return float(h)
    return optimal_bandwidth(n, d, alpha, bandwidth_c)


class _ClusterTreeBase(ClusterMixin, BaseEstimator):
    _strict_links = True

    def _build(self, ds: Dataset, h: float) -> ClusterHierarchy:
        raise NotImplementedError

    def fit(self, X, y=None):
        """Build the cluster hierarchy of ``X``.

        ``labels_`` holds the clustering at ``level`` (or at level 0 when
        ``level`` is None). ``splits_`` holds the splits of the hierarchy,
        restricted to ``prune_delta``-significant ones when that is set.
        """
        X = _check_X(X)
        ds = Dataset(X)
        self.n_features_in_ = ds.dim
        self.h_ = _resolve_bandwidth(self.h, ds.n, ds.dim, self.alpha, self.bandwidth_c)
        self.dataset_ = ds
        self.hierarchy_ = self._build(ds, self.h_)
        if self.prune_delta is None:
            self.splits_ = extract_splits(self.hierarchy_)
        else:
            self.splits_ = significant_splits(self.hierarchy_, self.prune_delta)
        self.level_ = 0.0 if self.level is None else float(self.level)
        self.labels_ = self.hierarchy_.labels_at(self.level_)
        return self

    def labels_at(self, level: float) -> np.ndarray:
        """Cluster id of each training point at ``level``, ``-1`` when inactive."""
        check_is_fitted(self, "hierarchy_")
        return self.hierarchy_.labels_at(level)

    def merge_height(self, i: int, j: int) -> float | None:
        check_is_fitted(self, "hierarchy_")
        return self.hierarchy_.merge_height(i, j)

    def predict(self, X) -> np.ndarray:
        """Assign new points to the cluster of the nearest linked active training point.

        A point is linked to an active training point at the fitted level
        when their distance is below ``2 h`` (at most ``2 h`` for the
        kernel variant). Unlinked points get ``-1``.
        """
        check_is_fitted(self, "hierarchy_")
        X = _check_X(X, self.n_features_in_)
        active = np.flatnonzero(self.labels_ >= 0)
        out = np.full(X.shape[0], -1, dtype=np.intp)
        if active.size == 0:
            return out
        pts = self.dataset_.points[active]
        qi, ai = NeighborIndex(pts).pairs(X, 2 * self.h_, strict=self._strict_links, sort=False)
        if qi.size == 0:
            return out
        dist = np.linalg.norm(X[qi] - pts[ai], axis=1)
        # nearest first, ties to the smaller training index
        order = np.lexsort((active[ai], dist, qi))
        qi, ai = qi[order], ai[order]
        first = np.ones(qi.size, dtype=bool)
        first[1:] = qi[1:] != qi[:-1]
        out[qi[first]] = self.labels_[active[ai[first]]]
        return out


class DBSCANClusterTree(_ClusterTreeBase):
    """Cluster tree from ball counts at a fixed bandwidth.

    Parameters
    ----------
    h : float, optional
        Bandwidth. When None it follows ``bandwidth_c (log n / n)^(1/(2 alpha + d))``.
    alpha : float, default=1.0
        Smoothness used by the bandwidth rule.
    bandwidth_c : float, default=1.0
    level : float, optional
        Density level of ``labels_``.
    prune_delta : float, optional
        Keep only splits whose children persist this far above the split.

    Attributes
    ----------
    h_ : float
    hierarchy_ : ClusterHierarchy
    labels_ : ndarray of shape (n_samples,)
    splits_ : list of SplitRecord
    """

    def __init__(self, h=None, alpha=1.0, bandwidth_c=1.0, level=None, prune_delta=None):
        self.h = h
        self.alpha = alpha
        self.bandwidth_c = bandwidth_c
        self.level = level
        self.prune_delta = prune_delta

    def _build(self, ds, h):
        return dbscan_hierarchy(ds, h)

    def level_of_k(self, k: int) -> float:
        check_is_fitted(self, "hierarchy_")
        return self.hierarchy_.level_of_k(k)


class ModifiedDBSCANClusterTree(_ClusterTreeBase):
    """Cluster tree from a higher-order kernel estimate.

    Parameters
    ----------
    h : float, optional
        Bandwidth; the rate-optimal rule is used when None.
    alpha : float, default=2.0
        Smoothness. Sets the bandwidth rule and, by default, the kernel order.
    bandwidth_c : float, default=1.0
    kernel_order : int, optional
        Order of the product kernel; defaults to ``ceil(alpha)``.
    level : float, optional
    prune_delta : float, optional
    """

    _strict_links = False

    def __init__(self, h=None, alpha=2.0, bandwidth_c=1.0, kernel_order=None, level=None, prune_delta=None):
        self.h = h
        self.alpha = alpha
        self.bandwidth_c = bandwidth_c
        self.kernel_order = kernel_order
        self.level = level
        self.prune_delta = prune_delta

    def _build(self, ds, h):
        order = self.kernel_order if self.kernel_order is not None else math.ceil(self.alpha)
        self.kernel_ = build_valid_kernel(int(order), ds.dim)
        return modified_dbscan_hierarchy(ds, self.kernel_, h)


class KernelDensityEstimator(TransformerMixin, BaseEstimator):
    """Kernel density estimate with the ball kernel or a higher-order product kernel.

    Parameters
    ----------
    h : float, optional
    kernel_order : int, optional
        None selects the ball kernel.
    alpha : float, default=1.0
    bandwidth_c : float, default=1.0
    """

    def __init__(self, h=None, kernel_order=None, alpha=1.0, bandwidth_c=1.0):
        self.h = h
        self.kernel_order = kernel_order
        self.alpha = alpha
        self.bandwidth_c = bandwidth_c

    def fit(self, X, y=None):
        X = _check_X(X)
        ds = Dataset(X)
        self.n_features_in_ = ds.dim
        self.dataset_ = ds
        self.h_ = _resolve_bandwidth(self.h, ds.n, ds.dim, self.alpha, self.bandwidth_c)
        self.kernel_ = SPHERICAL if self.kernel_order is None else build_valid_kernel(int(self.kernel_order), ds.dim)
        return self

    def evaluate(self, X) -> np.ndarray:
        """Density estimate at the rows of ``X``; may be negative for higher-order kernels."""
        check_is_fitted(self, "dataset_")
        X = _check_X(X, self.n_features_in_)
        return np.atleast_1d(np.asarray(kde_at(self.dataset_, self.kernel_, X, self.h_), dtype=float))

    def score_samples(self, X) -> np.ndarray:
        """Log density, ``-inf`` where the estimate is not positive."""
        vals = self.evaluate(X)
        out = np.full(vals.shape, -np.inf)
        pos = vals > 0
        out[pos] = np.log(vals[pos])
        return out

    def transform(self, X) -> np.ndarray:
        return self.evaluate(X)[:, None]


class DevroyeWiseLevelSet(BaseEstimator):
    """Level-set estimate as a union of balls around high-count sample points.

    Exactly one of ``k`` and ``level`` must be given. A level is turned into
    the count threshold ``ceil(n h^d V_d level)``.

    Parameters
    ----------
    h : float
    k : int, optional
    level : float, optional
    """

    def __init__(self, h=1.0, k=None, level=None):
        self.h = h
        self.k = k
        self.level = level

    def fit(self, X, y=None):
        if (self.k is None) == (self.level is None):
            raise ParameterError("give exactly one of k and level")
        X = _check_X(X)
        ds = Dataset(X)
        self.n_features_in_ = ds.dim
        if self.k is not None:
            self.k_ = int(self.k)
        else:
            self.k_ = ceil_count(ds.n * self.h ** ds.dim * unit_ball_volume(ds.dim) * self.level)
        self.region_ = devroye_wise(ds, self.h, self.k_)
        return self

    def predict(self, X) -> np.ndarray:
        """1 inside the estimated level set, 0 outside."""
        check_is_fitted(self, "region_")
        X = _check_X(X, self.n_features_in_)
        return self.region_.contains(X).astype(np.intp)

    def decision_function(self, X) -> np.ndarray:
        """Distance to the nearest ball centre minus the radius (negative inside)."""
        check_is_fitted(self, "region_")
        X = _check_X(X, self.n_features_in_)
        if self.region_.empty:
            return np.full(X.shape[0], np.inf)
        dist, _ = cKDTree(self.region_.center_points).query(X)
        return dist - self.region_.radius
