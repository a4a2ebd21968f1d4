"""Level sets: gridded densities, ball-union estimates and set comparisons.

Grids are regular, cell-centred and axis aligned. Connectivity on a grid
uses face adjacency. Regions expose ``contains(points)``; one-dimensional
regions also expose ``intervals()`` so that measures can be computed
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Protocol

import numpy as np
from scipy import ndimage

from .dbscan import ClusterHierarchy, build_hierarchy
from .exceptions import (
    GapTooSmallError,
    InvalidInputError,
    ParameterError,
    PrecisionError,
    PreconditionError,
    UnsupportedDimensionError,
)
from .geometry import Dataset, NeighborIndex, as_points
from .kde import ErrorBudget, Kernel, kde_at, unit_ball_volume

__all__ = [
    "Grid",
    "GriddedDensity",
    "Region",
    "Box",
    "Ball",
    "UnionRegion",
    "GridRegion",
    "LevelSetEstimate",
    "MeasureEstimate",
    "GapInputs",
    "ComponentLabels",
    "GapClusterReport",
    "ceil_count",
    "devroye_wise",
    "gap_inputs",
    "dilate_erode",
    "region_measure",
    "symmetric_difference_measure",
    "grid_levelset_components",
    "gap_cluster_check",
    "kde_grid",
    "grid_face_edges",
    "grid_hierarchy",
]

MAX_GRID_CELLS = 10 ** 8
_SNAP_BITS = 40


def ceil_count(x: float) -> int:
    """Ceiling that absorbs floating point noise around integers."""
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return int(r)
    return int(math.ceil(x))


# -- grids --------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Regular cell-centred grid.

    Parameters
    ----------
    lo : tuple of float
        Lower corner of the covered box.
    step : tuple of float
        Cell side length per axis.
    shape : tuple of int
        Number of cells per axis.
    """

    lo: tuple
    step: tuple
    shape: tuple

    @classmethod
    def covering(cls, lo, hi, step) -> "Grid":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        step = np.broadcast_to(np.asarray(step, dtype=float), lo.shape)
        if np.any(hi <= lo) or np.any(step <= 0):
            raise ParameterError("grid needs hi > lo and a positive step")
        shape = np.maximum(1, np.ceil((hi - lo) / step - 1e-9)).astype(int)
        if float(np.prod(shape.astype(float))) > MAX_GRID_CELLS:
            raise ParameterError(f"grid of shape {tuple(shape)} exceeds {MAX_GRID_CELLS} cells")
        return cls(tuple(lo.tolist()), tuple(step.tolist()), tuple(int(s) for s in shape))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def hi(self) -> tuple:
        return tuple(l + s * m for l, s, m in zip(self.lo, self.step, self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.step))

    def axes(self) -> list[np.ndarray]:
        """Cell centre coordinates along each axis."""
        # offsets from the box centre are exact half-integers, so symmetric boxes give mirror-exact centres
        return [
            (l + 0.5 * s * m) + (np.arange(m) - 0.5 * (m - 1)) * s
            for l, s, m in zip(self.lo, self.step, self.shape)
        ]

    def centers(self) -> np.ndarray:
        """All cell centres, shape (size, dim), in C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def cell_of(self, points) -> np.ndarray:
        """Flat index of the cell containing each point, ``-1`` outside the grid."""
        pts = as_points(points, self.dim)
        idx = np.floor((pts - np.asarray(self.lo)) / np.asarray(self.step)).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.shape)), axis=1)
        flat = np.full(pts.shape[0], -1, dtype=np.int64)
        if inside.any():
            flat[inside] = np.ravel_multi_index(tuple(idx[inside].T), self.shape)
        return flat


class GriddedDensity:
    """Function values on a :class:`Grid`.

    Values are snapped to a lattice of spacing ``2^-40`` times the largest
    magnitude, so values that agree up to rounding compare equal.

    Parameters
    ----------
    grid : Grid
    values : ndarray of shape ``grid.shape``
    allow_negative : bool, default False
        Permit negative values (higher-order kernel estimates).
    """

    def __init__(self, grid: Grid, values: np.ndarray, allow_negative: bool = False):
        vals = np.asarray(values, dtype=float).reshape(grid.shape)
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("gridded values must be finite")
        if not allow_negative and np.any(vals < 0):
            raise InvalidInputError("density values must be nonnegative")
        scale = float(np.abs(vals).max(initial=0.0))
        if scale > 0:
            quantum = scale * 2.0 ** -_SNAP_BITS
            vals = np.round(vals / quantum) * quantum
        vals.setflags(write=False)
        self.grid = grid
        self.values = vals
        self._distinct: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def distinct(self) -> np.ndarray:
        """Sorted distinct values."""
        if self._distinct is None:
            self._distinct = np.unique(self.values)
        return self._distinct

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def at(self, points) -> np.ndarray:
        """Value of the cell containing each point, ``0`` outside the grid."""
        flat = self.grid.cell_of(points)
        out = np.zeros(flat.size)
        ok = flat >= 0
        out[ok] = self.values.ravel()[flat[ok]]
        return out

    def region(self, level: float) -> "GridRegion":
        """Upper level set ``{value >= level}`` as a grid region."""
        return GridRegion(self.grid, self.values >= level)


# -- regions ------------------------------------------------------------------


class Region(Protocol):
    dim: int

    def contains(self, points) -> np.ndarray: ...


class Box:
    """Closed axis-aligned box."""

    def __init__(self, lo, hi):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        self.dim = self.lo.size

    def contains(self, points) -> np.ndarray:
        p = as_points(points, self.dim)
        return np.all((p >= self.lo) & (p <= self.hi), axis=1)

    def intervals(self) -> list[tuple[float, float]]:
        return [(float(self.lo[0]), float(self.hi[0]))]

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    @property
    def perimeter(self) -> float:
        sides = self.hi - self.lo
        if self.dim == 1:
            return 2.0
        if self.dim == 2:
            return float(2 * sides.sum())
        raise UnsupportedDimensionError("perimeter implemented for d <= 2")

    def distance_to(self, points) -> np.ndarray:
        p = as_points(points, self.dim)
        gap = np.maximum(self.lo - p, 0) + np.maximum(p - self.hi, 0)
        return np.sqrt((gap ** 2).sum(axis=1))


class Ball:
    """Closed Euclidean ball."""

    def __init__(self, center, radius: float):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        self.dim = self.center.size

    def contains(self, points) -> np.ndarray:
        p = as_points(points, self.dim)
        return np.sqrt(((p - self.center) ** 2).sum(axis=1)) <= self.radius

    def intervals(self) -> list[tuple[float, float]]:
        c = float(self.center[0])
        return [(c - self.radius, c + self.radius)]

    @property
    def volume(self) -> float:
        return unit_ball_volume(self.dim) * self.radius ** self.dim

    @property
    def perimeter(self) -> float:
        return self.dim * unit_ball_volume(self.dim) * self.radius ** (self.dim - 1)

    def distance_to(self, points) -> np.ndarray:
        p = as_points(points, self.dim)
        return np.maximum(np.sqrt(((p - self.center) ** 2).sum(axis=1)) - self.radius, 0.0)


def _merge_intervals(iv: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for a, b in sorted(iv):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


class UnionRegion:
    """Union of regions."""

    def __init__(self, parts):
        self.parts = list(parts)
        self.dim = self.parts[0].dim

    def contains(self, points) -> np.ndarray:
        p = as_points(points, self.dim)
        out = np.zeros(p.shape[0], dtype=bool)
        for part in self.parts:
            out |= part.contains(p)
        return out

    def intervals(self) -> list[tuple[float, float]]:
        return _merge_intervals([iv for part in self.parts for iv in part.intervals()])


class GridRegion:
    """Union of grid cells given by a boolean mask."""

    def __init__(self, grid: Grid, mask: np.ndarray):
        self.grid = grid
        self.mask = np.asarray(mask, dtype=bool).reshape(grid.shape)
        self.dim = grid.dim

    def contains(self, points) -> np.ndarray:
        flat = self.grid.cell_of(points)
        out = np.zeros(flat.size, dtype=bool)
        ok = flat >= 0
        out[ok] = self.mask.ravel()[flat[ok]]
        return out

    @property
    def volume(self) -> float:
        return float(self.mask.sum() * self.grid.cell_volume)


class LevelSetEstimate:
    """Union of closed balls of radius ``radius`` around selected sample points."""

    def __init__(self, dataset: Dataset, centers, radius: float):
        self.dataset = dataset
        self.centers = np.asarray(centers, dtype=np.intp)
        self.radius = float(radius)
        self.dim = dataset.dim
        self._index: NeighborIndex | None = None

    @property
    def center_points(self) -> np.ndarray:
        return self.dataset.points[self.centers]

    @property
    def empty(self) -> bool:
        return self.centers.size == 0

    def contains(self, points) -> np.ndarray:
        p = as_points(points, self.dim)
        if self.empty:
            return np.zeros(p.shape[0], dtype=bool)
        if self._index is None:
            self._index = NeighborIndex(self.center_points)
        return self._index.any_within(p, self.radius)

    def intervals(self) -> list[tuple[float, float]]:
        if self.dim != 1:
            raise UnsupportedDimensionError("intervals are defined for d = 1")
        c = self.center_points[:, 0]
        return _merge_intervals([(x - self.radius, x + self.radius) for x in c.tolist()])

    def to_json(self) -> dict:
        return {
            "radius": self.radius,
            "indices": self.centers.tolist(),
            "centers": self.center_points.tolist(),
        }


def devroye_wise(ds: Dataset, h: float, k: int) -> LevelSetEstimate:
    """Ball union over the sample points whose closed ``h``-ball holds at least ``k`` points."""
    if not h > 0:
        raise ParameterError("bandwidth must be positive")
    if k < 0:
        raise ParameterError("k must be nonnegative")
    counts = ds.index.counts(ds.points, h)
    return LevelSetEstimate(ds, np.flatnonzero(counts >= k), h)


# -- gap configuration --------------------------------------------------------


class GapInputs(NamedTuple):
    lam: float
    k: int
    a_n: float
    h_min: float
    h_ok: bool


def gap_inputs(
    n: int,
    d: int,
    h: float,
    lam_low: float,
    lam_high: float,
    budget: ErrorBudget | float,
    C1: float = 1.0,
) -> GapInputs:
    """Threshold and ball count for estimating the level set inside a density gap.

    The level is the midpoint of ``(lam_low + a_n, lam_high - a_n]`` and
    ``k = ceil(n h^d V_d lam)``. ``h_ok`` reports whether ``h`` is at least
    ``C1 (log n / (n eps^2))^(1/d)`` with ``eps = lam_high - lam_low``.

    Raises
    ------
    GapTooSmallError
        If ``lam_high - lam_low <= 2 a_n``.
    """
    a_n = budget.a_n if isinstance(budget, ErrorBudget) else float(budget)
    eps = lam_high - lam_low
    if not eps > 2 * a_n:
        raise GapTooSmallError(f"gap {eps:.4g} does not exceed 2 a_n = {2 * a_n:.4g}")
    lam = 0.5 * ((lam_low + a_n) + (lam_high - a_n))
    k = ceil_count(n * h ** d * unit_ball_volume(d) * lam)
    h_min = C1 * (math.log(n) / (n * eps ** 2)) ** (1.0 / d)
    return GapInputs(lam, k, a_n, h_min, bool(h >= h_min))


# -- geometry on grids --------------------------------------------------------


def _as_grid_region(region, grid: Grid | None) -> GridRegion:
    if isinstance(region, GridRegion):
        return region
    if grid is None:
        raise ParameterError("a grid is required to rasterize this region")
    return GridRegion(grid, region.contains(grid.centers()).reshape(grid.shape))


def dilate_erode(region, h: float, grid: Grid | None = None) -> tuple[GridRegion, GridRegion]:
    """Grid approximations of the ``h``-dilation and ``h``-erosion of a region.

    A cell belongs to the dilation when its centre is within ``h`` of a
    region cell centre, and to the erosion when every cell centre within
    ``h`` belongs to the region. Space outside the grid counts as outside
    the region.

    Raises
    ------
    PrecisionError
        If a grid step is not below ``h / 4``.
    """
    gr = _as_grid_region(region, grid)
    g = gr.grid
    if not h > 0:
        raise ParameterError("h must be positive")
    if max(g.step) >= h / 4:
        raise PrecisionError(f"grid step {max(g.step):.3g} is not below h/4 = {h / 4:.3g}")
    step = np.asarray(g.step)
    pad = int(math.ceil(h / min(g.step))) + 1
    if not gr.mask.any():
        empty = np.zeros(g.shape, dtype=bool)
        return GridRegion(g, empty), GridRegion(g, empty)
    outside = np.pad(~gr.mask, pad, constant_values=True)
    dist_in = ndimage.distance_transform_edt(outside, sampling=step)
    inside = np.pad(gr.mask, pad, constant_values=False)
    dist_out = ndimage.distance_transform_edt(inside, sampling=step)
    core = tuple(slice(pad, pad + m) for m in g.shape)
    return GridRegion(g, dist_in[core] <= h), GridRegion(g, dist_out[core] > h)


class MeasureEstimate(NamedTuple):
    value: float
    stderr: float


def _interval_measure(iv: list[tuple[float, float]]) -> float:
    return float(sum(b - a for a, b in _merge_intervals(iv)))


def _symdiff_intervals(a: list, b: list) -> float:
    pts = sorted({x for iv in a + b for x in iv})
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        mid = 0.5 * (lo + hi)
        in_a = any(x <= mid <= y for x, y in a)
        in_b = any(x <= mid <= y for x, y in b)
        if in_a != in_b:
            total += hi - lo
    return total


def region_measure(region, grid: Grid | None = None) -> float:
    """Lebesgue measure of a region: exact for intervals, cell count otherwise."""
    if region.dim == 1 and hasattr(region, "intervals"):
        return _interval_measure(region.intervals())
    return _as_grid_region(region, grid).volume


def symmetric_difference_measure(
    A,
    B,
    grid: Grid | None = None,
    *,
    box: Box | None = None,
    n_mc: int = 10 ** 6,
    seed: int = 0,
) -> MeasureEstimate:
    """Measure of the symmetric difference of two regions.

    One-dimensional regions with interval structure are compared exactly.
    Otherwise both regions are rasterized on ``grid`` when one is given (or
    when both are grid regions), and compared by uniform Monte Carlo over
    ``box`` as a last resort.

    Returns
    -------
    MeasureEstimate
        Value and standard error (zero for exact and grid results).
    """
    if A.dim != B.dim:
        raise InvalidInputError("regions differ in dimension")
    if A.dim == 1 and hasattr(A, "intervals") and hasattr(B, "intervals"):
        return MeasureEstimate(_symdiff_intervals(_merge_intervals(A.intervals()), _merge_intervals(B.intervals())), 0.0)
    if isinstance(A, GridRegion) and isinstance(B, GridRegion) and A.grid == B.grid and grid is None:
        grid = A.grid
    if grid is not None:
        ga, gb = _as_grid_region(A, grid), _as_grid_region(B, grid)
        return MeasureEstimate(float(np.count_nonzero(ga.mask ^ gb.mask) * grid.cell_volume), 0.0)
    if box is None:
        raise ParameterError("Monte Carlo comparison needs a bounding box")
    rng = np.random.default_rng(seed)
    hits = 0
    batch = 100_000
    for start in range(0, n_mc, batch):
        m = min(batch, n_mc - start)
        pts = box.lo + rng.random((m, A.dim)) * (box.hi - box.lo)
        hits += int(np.count_nonzero(A.contains(pts) ^ B.contains(pts)))
    frac = hits / n_mc
    return MeasureEstimate(frac * box.volume, math.sqrt(frac * (1 - frac) / n_mc) * box.volume)


# -- components on grids ------------------------------------------------------


class ComponentLabels(NamedTuple):
    grid_labels: np.ndarray
    count: int
    sample_labels: np.ndarray | None


def grid_levelset_components(gd: GriddedDensity, level: float, points=None) -> ComponentLabels:
    """Face-connected components of ``{value >= level}`` on a grid of dimension at most two.

    Grid labels run from 1 to ``count`` with 0 for cells below the level.
    Sample points, if given, take the label of their cell (``-1`` when below
    the level or outside the grid).
    """
    if gd.dim > 2:
        raise UnsupportedDimensionError("grid components are restricted to d <= 2")
    structure = ndimage.generate_binary_structure(gd.dim, 1)
    labels, count = ndimage.label(gd.values >= level, structure=structure)
    sample = None
    if points is not None:
        flat = gd.grid.cell_of(points)
        sample = np.full(flat.size, -1, dtype=np.int64)
        ok = flat >= 0
        sample[ok] = labels.ravel()[flat[ok]]
        sample[sample == 0] = -1
    return ComponentLabels(labels, int(count), sample)


@dataclass(frozen=True)
class GapClusterReport:
    """Outcome of the cluster recovery check on a gap density.

    ``grouped_ok`` covers test sets whose points must share a component,
    ``separated_ok`` covers test sets in different true clusters that must
    land in different components. Violations list the offending sample
    indices.
    """

    grouped_ok: bool
    separated_ok: bool
    n_test_sets: int
    n_clusters: int
    violations: tuple

    @property
    def ok(self) -> bool:
        return self.grouped_ok and self.separated_ok


def gap_cluster_check(
    labels: np.ndarray,
    ds: Dataset,
    gd: GriddedDensity,
    lam_high: float,
    h: float,
    sigma: float | None = None,
) -> GapClusterReport:
    """Check that an estimated clustering recovers the clusters of a gap density.

    Test sets are the connected pieces of each true cluster eroded by ``2h``.

    Parameters
    ----------
    labels : ndarray of shape (n,)
        Component id of each sample point, negative when unassigned.
    ds : Dataset
    gd : GriddedDensity
        Density with a gap whose upper edge is ``lam_high``.
    lam_high : float
        Level defining the true clusters ``{p >= lam_high}``.
    h : float
        Bandwidth of the estimate.
    sigma : float, optional
        Cluster separation; when given, ``h <= sigma / 4`` is required.
    """
    if sigma is not None and h > sigma / 4:
        raise PreconditionError(f"h = {h:.4g} exceeds sigma/4 = {sigma / 4:.4g}")
    labels = np.asarray(labels)
    truth = grid_levelset_components(gd, lam_high)
    cells = gd.grid.cell_of(ds.points)
    violations = []
    seen: list[tuple[int, set]] = []
    n_sets = 0
    structure = ndimage.generate_binary_structure(gd.dim, 1)
    for c in range(1, truth.count + 1):
        _, eroded = dilate_erode(GridRegion(gd.grid, truth.grid_labels == c), 2 * h)
        pieces, m = ndimage.label(eroded.mask, structure=structure)
        flat = pieces.ravel()
        piece_of = np.where(cells >= 0, flat[np.maximum(cells, 0)], 0)
        for j in range(1, m + 1):
            n_sets += 1
            members = np.flatnonzero(piece_of == j)
            if members.size == 0:
                continue
            lab = set(labels[members].tolist())
            if len(lab) != 1 or min(lab) < 0:
                violations.append(("grouped", c, members.tolist()))
            seen.append((c, lab))
    separated = True
    for i in range(len(seen)):
        for j in range(i + 1, len(seen)):
            ci, li = seen[i]
            cj, lj = seen[j]
            if ci != cj and (li & lj) - {-1}:
                separated = False
                violations.append(("separated", (ci, cj), sorted((li & lj) - {-1})))
    grouped = not any(v[0] == "grouped" for v in violations)
    return GapClusterReport(grouped, separated, n_sets, truth.count, tuple(violations))


# -- gridded estimates and grid hierarchies -----------------------------------


def kde_grid(ds: Dataset, kernel: Kernel, h: float, grid: Grid) -> GriddedDensity:
    """Kernel estimate evaluated at every cell centre."""
    if grid.dim != ds.dim:
        raise InvalidInputError("grid and data differ in dimension")
    centers = grid.centers()
    vals = np.empty(centers.shape[0])
    chunk = 50_000
    for start in range(0, centers.shape[0], chunk):
        vals[start:start + chunk] = kde_at(ds, kernel, centers[start:start + chunk], h)
    return GriddedDensity(grid, vals.reshape(grid.shape), allow_negative=True)


def grid_face_edges(shape: tuple) -> tuple[np.ndarray, np.ndarray]:
    """Flat index pairs of face-adjacent cells."""
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    us, vs = [], []
    for axis in range(len(shape)):
        a = np.take(idx, np.arange(shape[axis] - 1), axis=axis).ravel()
        b = np.take(idx, np.arange(1, shape[axis]), axis=axis).ravel()
        us.append(a)
        vs.append(b)
    return np.concatenate(us), np.concatenate(vs)


def cell_hierarchy(gd: GriddedDensity, **meta) -> ClusterHierarchy:
    """Hierarchy of face-connected components of ``{value >= lam}`` over cells, ``lam > 0``."""
    vals = gd.values.ravel()
    activation = np.where(vals > 0, vals, -np.inf)
    u, v = grid_face_edges(gd.grid.shape)
    meta.setdefault("h", 0.0)
    meta.setdefault("kernel", None)
    meta.setdefault("algorithm", "grid")
    return build_hierarchy(activation, u, v, **meta)


def grid_hierarchy(ds: Dataset, gd: GriddedDensity, h: float, kernel: Kernel) -> ClusterHierarchy:
    """Sample hierarchy induced by the grid components of a gridded estimate.

    At every level ``lam > 0`` a sample point is active when its cell value
    is at least ``lam``, and two active points share a cluster when their
    cells share a face-connected component of ``{value >= lam}``.
    """
    if gd.dim > 2:
        raise UnsupportedDimensionError("grid hierarchies are restricted to d <= 2")
    cells = gd.grid.cell_of(ds.points)
    if np.any(cells < 0):
        raise InvalidInputError("sample points fall outside the grid")
    ch = cell_hierarchy(gd)
    act = ch.activation[cells]
    pos = ch.position[cells]
    order = np.lexsort((np.arange(ds.n), pos))
    p = pos[order]
    u, v = order[:-1], order[1:]
    w = np.empty(u.size)
    same = p[:-1] == p[1:]
    w[same] = act[u[same]]
    diff = ~same
    if diff.any():
        starts = p[:-1][diff]
        ends = p[1:][diff]
        # minimum of cell gaps over [start, end) for each distinct consecutive pair
        cuts = np.unique(np.concatenate([starts, ends]))
        seg = np.minimum.reduceat(np.append(ch.gaps, -np.inf), cuts)
        where = np.searchsorted(cuts, starts)
        w[diff] = [float(seg[a:b].min()) for a, b in zip(where, np.searchsorted(cuts, ends))]
    w = np.minimum(w, np.minimum(act[u], act[v]))
    return build_hierarchy(act, u, v, weights=w, h=h, kernel=kernel, algorithm="gridlevel", dim=ds.dim)
