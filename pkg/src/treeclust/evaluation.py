"""Consistency checks of estimated hierarchies against gridded ground truth.

A separated pair is two connected grid regions lying above a true split in
different children. An estimated hierarchy handles the pair correctly when
the smallest clusters containing the sample points of each region are
disjoint. Rate experiments search, per sample size, for the smallest margin
at which this holds in a target fraction of seeded runs.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage
from scipy.signal import fftconvolve

from .cluster_tree import TrueSplit, child_pieces, true_split_levels
from .dbscan import ClusterHierarchy, dbscan_hierarchy, modified_dbscan_hierarchy
from .exceptions import ParameterError
from .geometry import Dataset, epsilon_graph_components
from .kde import SPHERICAL, Kernel, build_valid_kernel, kde_at, optimal_bandwidth, unit_ball_volume
from .levelset import (
    Grid,
    GriddedDensity,
    GridRegion,
    devroye_wise,
    dilate_erode,
    gap_cluster_check,
    gap_inputs,
    symmetric_difference_measure,
)
from .synthetic import DensitySpec, sample

__all__ = [
    "EMPTY",
    "SEPARATED",
    "MERGED",
    "UNCONTAINED",
    "SeparatedPair",
    "ConsistencyReport",
    "RateRow",
    "RateResult",
    "make_separated_pairs",
    "check_delta_consistency",
    "fit_hierarchy",
    "rate_experiment",
    "fit_slope",
    "smoothed_density",
    "deviation_statistic",
    "calibrate_constants",
    "worker_count",
    "GapTrial",
    "gap_grid",
    "gap_levelset_trial",
]

EMPTY = "empty-intersection"
SEPARATED = "correctly-separated"
MERGED = "incorrectly-merged"
UNCONTAINED = "uncontained"


def worker_count() -> int:
    """Worker cap from ``TREECLUST_THREADS``, defaulting to one."""
    raw = os.environ.get("TREECLUST_THREADS", "1")
    try:
        return max(1, min(int(raw), os.cpu_count() or 1))
    except ValueError:
        raise ParameterError(f"TREECLUST_THREADS must be an integer, got {raw!r}") from None


def _map(fn: Callable, items: Sequence, workers: int | None = None) -> list:
    workers = worker_count() if workers is None else workers
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True, eq=False)
class SeparatedPair:
    """Two grid regions in different children of a true split.

    Attributes
    ----------
    grid : Grid
    mask_a, mask_b : ndarray of bool
        The two regions.
    delta : float
        Requested margin.
    lam : float
        Smallest grid value over both regions.
    split_level : float
    certificate : tuple of int
        Labels of the regions in the flood fill of ``{p > lam - delta}``.
    """

    grid: Grid
    mask_a: np.ndarray
    mask_b: np.ndarray
    delta: float
    lam: float
    split_level: float
    certificate: tuple

    def members(self, ds: Dataset | None = None, cells: np.ndarray | None = None):
        """Sample indices falling in each region."""
        if cells is None:
            cells = self.grid.cell_of(ds.points)
        ok = cells >= 0
        safe = np.where(ok, cells, 0)
        in_a = ok & self.mask_a.ravel()[safe]
        in_b = ok & self.mask_b.ravel()[safe]
        return np.flatnonzero(in_a), np.flatnonzero(in_b)


def certify(gd: GriddedDensity, mask_a: np.ndarray, mask_b: np.ndarray, delta: float) -> tuple[int, int] | None:
    """Flood-fill labels of two regions in ``{p > lam - delta}``, None if they share one."""
    lam = float(min(gd.values[mask_a].min(), gd.values[mask_b].min()))
    structure = ndimage.generate_binary_structure(gd.dim, 1)
    labels, _ = ndimage.label(gd.values > lam - delta, structure=structure)
    la = np.unique(labels[mask_a])
    lb = np.unique(labels[mask_b])
    if la.size != 1 or lb.size != 1 or la[0] == 0 or la[0] == lb[0]:
        return None
    return int(la[0]), int(lb[0])


def make_separated_pairs(
    gd: GriddedDensity,
    delta: float,
    splits: list[TrueSplit] | None = None,
) -> list[SeparatedPair]:
    """Separated pairs at margin ``delta`` above every true split.

    For each split, the children are cut at ``split level + delta`` (or at the
    next grid value if that is higher). Every connected piece of one child
    is paired with every piece of another child. Pieces that fail the
    flood-fill certificate are skipped.
    """
    if not delta > 0:
        raise ParameterError("delta must be positive")
    if splits is None:
        splits = true_split_levels(gd)
    top = float(gd.values.max())
    out = []
    for split in splits:
        level = max(split.level + delta, split.upper)
        if level > top:
            continue
        groups = child_pieces(gd, split, level)
        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                for ma in groups[i]:
                    for mb in groups[j]:
                        cert = certify(gd, ma, mb, delta)
                        if cert is None:
                            continue
                        lam = float(min(gd.values[ma].min(), gd.values[mb].min()))
                        out.append(SeparatedPair(gd.grid, ma, mb, float(delta), lam, split.level, cert))
    return out


@dataclass(frozen=True)
class ConsistencyReport:
    """Per-pair outcomes of a consistency check and the overall verdict."""

    outcomes: tuple

    @property
    def success(self) -> bool:
        return all(o in (EMPTY, SEPARATED) for o in self.outcomes)


def pair_outcome(hier: ClusterHierarchy, idx_a: np.ndarray, idx_b: np.ndarray) -> str:
    if idx_a.size == 0 or idx_b.size == 0:
        return EMPTY
    ma = hier.set_merge_height(idx_a)
    mb = hier.set_merge_height(idx_b)
    if ma is None or mb is None:
        return UNCONTAINED
    # the smallest containing clusters are disjoint exactly when neither contains the other's points
    cross = hier.merge_height(int(idx_a[0]), int(idx_b[0]))
    if cross is None or cross < min(ma, mb):
        return SEPARATED
    return MERGED


def check_delta_consistency(
    hier: ClusterHierarchy,
    pairs: Sequence[SeparatedPair],
    ds: Dataset,
    cells: np.ndarray | None = None,
) -> ConsistencyReport:
    """Classify each separated pair against the hierarchy built from ``ds``.

    A region holding no sample point is a vacuous pass. A region whose
    points never share a cluster is reported as ``uncontained``, which
    counts as a failure.
    """
    if not pairs:
        return ConsistencyReport(())
    if cells is None:
        cells = pairs[0].grid.cell_of(ds.points)
    return ConsistencyReport(tuple(pair_outcome(hier, *p.members(cells=cells)) for p in pairs))


def fit_hierarchy(ds: Dataset, algorithm: str, h: float, kernel: Kernel | None = None) -> ClusterHierarchy:
    """Build a hierarchy with the named algorithm."""
    if algorithm == "dbscan":
        return dbscan_hierarchy(ds, h)
    if algorithm == "mdbscan":
        if kernel is None:
            raise ParameterError("mdbscan needs a kernel")
        return modified_dbscan_hierarchy(ds, kernel, h)
    raise ParameterError(f"unknown algorithm {algorithm!r}")


@dataclass(frozen=True)
class RateRow:
    n: int
    h: float
    delta_min: float
    success_rate: float
    evaluations: int
    non_monotone: bool


@dataclass(frozen=True)
class RateResult:
    rows: tuple
    slope: float
    trace: dict

    @property
    def flagged(self) -> bool:
        return any(r.non_monotone for r in self.rows)


def fit_slope(ns, values) -> float:
    """Least-squares slope of ``log value`` against ``log n`` over finite entries."""
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    ok = np.isfinite(values) & (values > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(ns[ok]), np.log(values[ok]), 1)[0])


def _success_rate(hiers, cell_sets, pairs) -> float:
    if not pairs:
        return 1.0
    ok = 0
    for hier, cells in zip(hiers, cell_sets):
        ok += all(pair_outcome(hier, *p.members(cells=cells)) in (EMPTY, SEPARATED) for p in pairs)
    return ok / len(hiers)


def rate_experiment(
    spec: DensitySpec,
    algorithm: str,
    n_grid: Sequence[int],
    seeds: Sequence[int],
    *,
    alpha: float,
    bandwidth_c: float = 1.0,
    kernel_order: int | None = None,
    grid_step: float = 0.002,
    target: float = 0.9,
    rel_tol: float = 0.02,
    workers: int | None = None,
) -> RateResult:
    """Smallest separation margin handled in a ``target`` fraction of runs, per sample size.

    For every ``n`` one hierarchy is built per seed with bandwidth
    ``optimal_bandwidth(n, d, alpha, bandwidth_c)``. The margin is then
    bisected on a log scale between a small fraction of the largest
    feasible margin and that margin, until the bracket is within
    ``rel_tol``. A row is flagged when the recorded success rates decrease
    with the margin by more than one seed.
    """
    kernel = SPHERICAL
    if algorithm == "mdbscan":
        kernel = build_valid_kernel(kernel_order or math.ceil(alpha), spec.dim)
    gd = _grid_of(spec, grid_step)
    splits = true_split_levels(gd)
    if not splits:
        raise ParameterError("density has no split")
    top = float(gd.values.max())
    hi_delta = max(top - s.level for s in splits)
    rows, trace = [], {}
    pair_cache: dict[float, list] = {}

    def pairs_at(delta):
        if delta not in pair_cache:
            pair_cache[delta] = make_separated_pairs(gd, delta, splits)
        return pair_cache[delta]

    for n in n_grid:
        h = optimal_bandwidth(n, spec.dim, alpha, bandwidth_c)

        def build(seed, n=n, h=h):
            ds = sample(spec, n, seed)
            return fit_hierarchy(ds, algorithm, h, kernel), gd.grid.cell_of(ds.points)

        built = _map(build, list(seeds), workers)
        hiers = [b[0] for b in built]
        cells = [b[1] for b in built]
        record: list[tuple[float, float]] = []

        def rate(delta):
            r = _success_rate(hiers, cells, pairs_at(delta))
            record.append((delta, r))
            return r

        hi = hi_delta * (1 - 1e-9)
        lo = hi_delta * 1e-4
        if rate(hi) < target:
            delta_min = math.inf
        elif rate(lo) >= target:
            delta_min = lo
        else:
            while hi / lo > 1 + rel_tol:
                mid = math.sqrt(lo * hi)
                if rate(mid) >= target:
                    hi = mid
                else:
                    lo = mid
            delta_min = hi
        final = dict(record).get(delta_min, math.nan)
        srt = sorted(record)
        slack = 1.0 / len(seeds)
        bad = any(srt[i][1] > srt[j][1] + slack for i in range(len(srt)) for j in range(i + 1, len(srt)))
        rows.append(RateRow(int(n), float(h), float(delta_min), float(final), len(record), bad))
        trace[int(n)] = srt
    slope = fit_slope([r.n for r in rows], [r.delta_min for r in rows])
    return RateResult(tuple(rows), slope, trace)


def _grid_of(spec: DensitySpec, step: float) -> GriddedDensity:
    from .synthetic import grid

    return grid(spec, step)


# -- calibration of the error budget constants --------------------------------


def _kernel_stencil(kernel: Kernel, h: float, step: tuple) -> np.ndarray:
    d = len(step)
    reach = [int(math.ceil(h / s)) for s in step]
    axes = [np.arange(-r, r + 1) * s / h for r, s in zip(reach, step)]
    mesh = np.meshgrid(*axes, indexing="ij")
    u = np.stack([m.ravel() for m in mesh], axis=1)
    w = kernel(u).reshape(mesh[0].shape)
    if kernel.kind == "spherical":
        w = w / unit_ball_volume(d)
    # Riemann weights, rescaled so the discrete kernel integrates to one
    return w / w.sum() / float(np.prod(step))


def smoothed_density(spec: DensitySpec, kernel: Kernel, h: float, grid: Grid) -> np.ndarray:
    """Expected kernel estimate ``E p_hat_h`` at the cell centres, by discrete convolution."""
    vals = spec.pdf(grid.centers()).reshape(grid.shape)
    stencil = _kernel_stencil(kernel, h, grid.step)
    return fftconvolve(vals, stencil, mode="same") * grid.cell_volume


def _calibration_grid(spec: DensitySpec, h: float, step: float | None) -> Grid:
    if step is None:
        step = min(h / 40, 0.002) if spec.dim == 1 else min(h / 10, 0.02)
    lo = spec.lo - 1.1 * h
    hi = spec.hi + 1.1 * h
    return Grid.covering(lo, hi, step)


def deviation_statistic(
    spec: DensitySpec,
    kernel: Kernel,
    n: int,
    h: float,
    seed: int,
    step: float | None = None,
) -> float:
    """Sup-norm deviation of one estimate from its expectation, in units of the variance rate."""
    g = _calibration_grid(spec, h, step)
    p_h = smoothed_density(spec, kernel, h, g)
    ds = sample(spec, n, seed)
    est = kde_at(ds, kernel, g.centers(), h).reshape(g.shape)
    rate = (math.log(n) + math.log(1.0 / h)) / math.sqrt(n * h ** spec.dim)
    return float(np.abs(est - p_h).max()) / rate


def calibrate_constants(
    spec: DensitySpec,
    kernel: Kernel,
    n_grid: Sequence[int],
    seeds: Sequence[int],
    *,
    alpha: float,
    bandwidth_c: float = 1.0,
    h_rule: Callable[[int], float] | None = None,
    step: float | None = None,
) -> dict:
    """Empirical variance and bias constants of the error budget.

    The variance constant is the largest deviation statistic over all
    ``(n, seed)`` cells. The bias constant is the largest
    ``sup |E p_hat_h - p| / h^alpha`` over the sample sizes.
    """
    c1, c2 = 0.0, 0.0
    for n in n_grid:
        h = h_rule(n) if h_rule is not None else optimal_bandwidth(n, spec.dim, alpha, bandwidth_c)
        g = _calibration_grid(spec, h, step)
        p_h = smoothed_density(spec, kernel, h, g)
        p = spec.pdf(g.centers()).reshape(g.shape)
        c2 = max(c2, float(np.abs(p_h - p).max()) / h ** alpha)
        rate = (math.log(n) + math.log(1.0 / h)) / math.sqrt(n * h ** spec.dim)
        centers = g.centers()
        for seed in seeds:
            ds = sample(spec, n, seed)
            est = kde_at(ds, kernel, centers, h).reshape(g.shape)
            c1 = max(c1, float(np.abs(est - p_h).max()) / rate)
    return {"C1": c1, "C2": c2}


# -- level sets of gap densities ----------------------------------------------


@dataclass(frozen=True)
class GapTrial:
    """One seeded run of the level-set estimator on a gap density.

    ``bound`` is ``2 C0 (2h)``, the guarantee implied by the ``2h``
    inclusions, and ``bound_h`` the tighter ``2 C0 h``.
    """

    n: int
    seed: int
    h: float
    k: int
    lam: float
    a_n: float
    symdiff: float
    bound: float
    bound_h: float
    inner_ok: bool
    outer_ok: bool
    clusters_ok: bool | None

    @property
    def within_bound(self) -> bool:
        return self.symdiff <= self.bound


def gap_grid(spec: DensitySpec, step: float, pad: float) -> GriddedDensity:
    """Grid of a gap density over its box widened by ``pad`` on every side."""
    g = Grid.covering(np.asarray(spec.lo) - pad, np.asarray(spec.hi) + pad, step)
    return GriddedDensity(g, spec.pdf(g.centers()).reshape(g.shape))


def gap_levelset_trial(
    spec: DensitySpec,
    n: int,
    seed: int,
    h: float,
    a_n: float,
    gd: GriddedDensity,
    check_clusters: bool = True,
    bands: tuple[GridRegion, GridRegion] | None = None,
) -> GapTrial:
    """Estimate the cluster set of a gap density and score it on the grid.

    The count threshold comes from :func:`gap_inputs`. The estimate is
    compared with the true set ``{p >= lam_high}`` by cell counting, and the
    inclusions ``S_{-2h} ⊆ S_hat ⊆ S_{2h}`` are checked cell by cell. With
    ``check_clusters`` the components of the count-filtered ``2h`` graph are
    run through :func:`gap_cluster_check`. ``bands`` may carry the
    precomputed ``2h`` dilation and erosion of the true set.
    """
    facts = spec.facts
    ds = sample(spec, n, seed)
    gi = gap_inputs(n, spec.dim, h, facts["lam_low"], facts["lam_high"], a_n)
    est = devroye_wise(ds, h, gi.k)
    truth = gd.region(facts["lam_high"])
    est_mask = GridRegion(gd.grid, est.contains(gd.grid.centers()).reshape(gd.grid.shape))
    symdiff = symmetric_difference_measure(truth, est_mask).value
    outer, inner = bands if bands is not None else dilate_erode(truth, 2 * h)
    inner_ok = bool(np.all(est_mask.mask[inner.mask]))
    outer_ok = bool(np.all(outer.mask[est_mask.mask]))
    clusters_ok = None
    if check_clusters:
        labels = np.full(ds.n, -1, dtype=np.intp)
        for block in epsilon_graph_components(ds, est.centers, 2 * h, strict=True):
            labels[block] = block[0]
        report = gap_cluster_check(labels, ds, gd, facts["lam_high"], h, facts.get("sigma"))
        clusters_ok = report.ok
    c0 = facts["C0"]
    return GapTrial(
        int(n), int(seed), float(h), gi.k, gi.lam, gi.a_n, float(symdiff),
        2 * c0 * 2 * h, 2 * c0 * h, inner_ok, outer_ok, clusters_ok,
    )
