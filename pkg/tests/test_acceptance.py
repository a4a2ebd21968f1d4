"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Frozen constants come from ``calibration.json`` (seeds 1000 and up); every
run here uses seeds 0..49.
"""

from __future__ import annotations

import math
import time
from collections import deque
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, CALIBRATION, NESTING
from treeclust import cli
from treeclust.cluster_tree import significant_splits, true_split_levels
from treeclust.dbscan import dbscan_hierarchy, modified_dbscan_hierarchy
from treeclust.evaluation import (
    check_delta_consistency,
    gap_grid,
    gap_levelset_trial,
    make_separated_pairs,
    rate_experiment,
)
from treeclust.geometry import Dataset
from treeclust.kde import (
    SPHERICAL,
    build_valid_kernel,
    error_budget,
    kde_at,
    optimal_bandwidth,
    spherical_kde_at,
)
from treeclust.levelset import Grid, dilate_erode, gap_inputs, kde_grid
from treeclust.synthetic import get_spec, grid, sample

SEEDS = range(50)
N_GRID = [250, 500, 1000, 2000, 4000]


def report(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:02d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def budget(name: str, n: int, h: float, alpha: float):
    spec = get_spec(name)
    cal = CALIBRATION["budgets"][name]
    return error_budget(n, h, spec.dim, alpha, spec.facts.get("L", 1.0), C1=cal["C1"], C2=cal["C2"])


# -- oracles -------------------------------------------------------------------


def interval_union_components(x: np.ndarray, active: np.ndarray, h: float) -> set:
    """Components of the union of closed intervals [x - h, x + h] over active points."""
    idx = active[np.argsort(x[active], kind="stable")]
    comps, cur, right = [], [], -math.inf
    for i in idx.tolist():
        if cur and x[i] - h > right:
            comps.append(frozenset(cur))
            cur = []
        cur.append(i)
        right = max(right, x[i] + h) if len(cur) > 1 else x[i] + h
    if cur:
        comps.append(frozenset(cur))
    return set(comps)


def ball_graph_components(pts: np.ndarray, active: np.ndarray, h: float) -> set:
    """Components of the intersection graph of closed h-balls, by BFS on a dense matrix."""
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    adj = d <= 2 * h
    act = set(active.tolist())
    seen, comps = set(), set()
    for s in active.tolist():
        if s in seen:
            continue
        seen.add(s)
        queue, comp = deque([s]), [s]
        while queue:
            i = queue.popleft()
            for j in np.flatnonzero(adj[i]).tolist():
                if j in act and j not in seen:
                    seen.add(j)
                    comp.append(j)
                    queue.append(j)
        comps.add(frozenset(comp))
    return comps


def max_estimate_within(x: np.ndarray, centers: np.ndarray, values: np.ndarray, h: float) -> np.ndarray:
    """For each query, the largest estimate over sample points within closed distance h (-inf if none)."""
    order = np.argsort(centers)
    c, v = centers[order], values[order]
    lo = np.searchsorted(c, x - h, side="left")
    hi = np.searchsorted(c, x + h, side="right")
    out = np.full(x.size, -np.inf)
    for q in np.flatnonzero(hi > lo):
        out[q] = v[lo[q]:hi[q]].max()
    return out


# -- criteria ------------------------------------------------------------------


def test_criterion_01_graph_union_of_balls_equivalence():
    t0 = time.perf_counter()
    mismatches, checked = 0, 0
    for inst in range(200):
        rng = np.random.default_rng(inst)
        d = 1 if inst < 100 else 2
        n = int(rng.integers(5, 31))
        pts = rng.random((n, d)) * 3.0
        h = float(rng.uniform(0.1, 0.5))
        hier = dbscan_hierarchy(Dataset(pts), h)
        dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
        counts = (dist <= h).sum(axis=1)
        for k in range(n + 1):
            active = np.flatnonzero(counts >= k)
            if d == 1:
                truth = interval_union_components(pts[:, 0], active, h)
            else:
                truth = ball_graph_components(pts, active, h)
            got = {frozenset(c.tolist()) for c in hier.clusters_at(hier.level_of_k(k))}
            mismatches += got != truth
            checked += 1
    elapsed = time.perf_counter() - t0
    report(
        1, "graph components equal union-of-balls components",
        mismatches == 0 and elapsed < 10,
        f"{checked} (instance, k) partitions, {mismatches} mismatches, {elapsed:.1f} s (limit 10 s)",
    )


def test_criterion_02_nesting():
    # runs last; a few extra shapes make the check meaningful when run alone
    rng = np.random.default_rng(7)
    pts = np.concatenate([rng.normal(size=(150, 2)), np.repeat(rng.normal(size=(5, 2)), 4, axis=0)])
    ds = Dataset(pts)
    dbscan_hierarchy(ds, 0.3)
    modified_dbscan_hierarchy(ds, build_valid_kernel(4, 2), 0.5)
    modified_dbscan_hierarchy(Dataset(rng.normal(size=(200, 1))), build_valid_kernel(2, 1), 0.3)
    algos = ", ".join(f"{k}={v}" for k, v in sorted(NESTING["algorithms"].items()))
    report(
        2, "nesting holds for every hierarchy built in the suite",
        NESTING["checked"] > 0 and NESTING["violations"] == 0,
        f"{NESTING['checked']} hierarchies ({algos}), {NESTING['violations']} violations",
    )


def test_criterion_03_sandwich_inclusions():
    t0 = time.perf_counter()
    spec = get_spec("two_bump")
    n = 2000
    h = optimal_bandwidth(n, 1, 1.0)
    L = spec.facts["L"]
    c = 2 * budget("two_bump", n, h, 1.0).a_n + L * h
    g = Grid.covering(spec.lo - 2 * h, spec.hi + 2 * h, 0.002)
    x = g.centers()[:, 0]
    p = spec.pdf(g.centers())
    lams = np.arange(1, int(spec.sup / 0.002) + 1) * 0.002
    passed = 0
    for seed in SEEDS:
        ds = sample(spec, n, seed)
        est = spherical_kde_at(ds, ds.points, h)
        # x lies in the ball union over points active at lam exactly when m(x) >= lam
        m = max_estimate_within(x, ds.points[:, 0], est, h)
        inner = all(not np.any((p >= lam + c) & (m < lam)) for lam in lams)
        outer = all(not np.any((m >= lam) & (p < lam - c)) for lam in lams)
        passed += inner and outer
    elapsed = time.perf_counter() - t0
    report(
        3, "level-set sandwich around the active ball union",
        passed >= 45 and elapsed < 120,
        f"{passed}/50 runs (need 45), margin {c:.4f}, {lams.size} levels, {elapsed:.1f} s (limit 120 s)",
    )


@pytest.mark.slow
def test_criterion_04_dbscan_rate_slope():
    t0 = time.perf_counter()
    res = rate_experiment(get_spec("two_bump"), "dbscan", N_GRID, list(SEEDS), alpha=1.0)
    elapsed = time.perf_counter() - t0
    table = ", ".join(f"n={r.n}: {r.delta_min:.4f}" for r in res.rows)
    report(
        4, "dbscan separation rate slope",
        -0.48 <= res.slope <= -0.18 and elapsed < 900,
        f"slope {res.slope:.3f} in [-0.48, -0.18]; {table}; {elapsed:.0f} s (limit 900 s)",
    )


@pytest.mark.slow
def test_criterion_05_modified_dbscan_rate():
    spec = get_spec("spline_pair_a2")
    res = rate_experiment(spec, "mdbscan", N_GRID, list(SEEDS), alpha=2.0, kernel_order=2)
    slope_ok = -0.55 <= res.slope <= -0.25

    n = 4000
    h = optimal_bandwidth(n, 1, 2.0)
    cs = CALIBRATION["c_S"]["spline_pair_a2"]["c_S"]
    delta = 2 * budget("spline_pair_a2", n, h, 2.0).a_n + (4 * h / cs) ** 2
    gd = grid(spec, 0.002)
    pairs = make_separated_pairs(gd, delta)
    kernel = build_valid_kernel(2, 1)
    wins = 0
    for seed in SEEDS:
        ds = sample(spec, n, seed)
        wins += check_delta_consistency(modified_dbscan_hierarchy(ds, kernel, h), pairs, ds).success
    report(
        5, "modified dbscan rate and fixed-n margin",
        slope_ok and len(pairs) > 0 and wins >= 45,
        f"slope {res.slope:.3f} in [-0.55, -0.25]; n=4000 margin {delta:.4f} "
        f"({len(pairs)} pairs) succeeds in {wins}/50 (need 45)",
    )


@pytest.mark.slow
def test_criterion_06_split_level_estimation():
    spec = get_spec("gaussian_two_bump")
    n = 4000
    h = optimal_bandwidth(n, 1, 2.0)
    cs = CALIBRATION["c_S"]["gaussian_two_bump"]["c_S"]
    delta = 2 * budget("gaussian_two_bump", n, h, 2.0).a_n + (4 * h / cs) ** 2
    truth = true_split_levels(grid(spec, 0.001))
    lam_star = truth[0].level
    kernel = build_valid_kernel(2, 1)
    exactly_one, within, detecting, multiple = 0, 0, 0, 0
    worst = 0.0
    for seed in SEEDS:
        ds = sample(spec, n, seed)
        found = significant_splits(modified_dbscan_hierarchy(ds, kernel, h), delta)
        exactly_one += len(found) == 1
        multiple += len(found) >= 2
        if found:
            detecting += 1
            err = max(abs(s.level - lam_star) for s in found)
            worst = max(worst, err)
            within += err <= delta
    ok = len(truth) == 1 and exactly_one >= 45 and within == detecting and multiple <= 5
    report(
        6, "significant split level estimation",
        ok,
        f"true split {lam_star:.5f}, margin {delta:.4f}; exactly one in {exactly_one}/50 (need 45); "
        f"within margin {within}/{detecting} detecting runs (max error {worst:.4f}); "
        f"{multiple} runs with >= 2 splits (tolerated 5)",
    )


def _gap_setup(n: int):
    spec = get_spec("gap_disk_square")
    eps = spec.facts["eps"]
    h = (math.log(n) / (n * eps ** 2)) ** 0.5
    cal = CALIBRATION["budgets"]["gap_disk_square"]
    a_n = error_budget(n, h, 2, math.inf, 1.0, C1=cal["C1"], C2=0.0).a_n
    gd = gap_grid(spec, 0.01, 3 * h)
    return spec, h, a_n, gd


@pytest.mark.slow
def test_criterion_07_gap_levelset_error():
    medians, lines, ok = {}, [], True
    for n in (1000, 4000):
        spec, h, a_n, gd = _gap_setup(n)
        bands = dilate_erode(gd.region(spec.facts["lam_high"]), 2 * h)
        trials = [gap_levelset_trial(spec, n, s, h, a_n, gd, check_clusters=False, bands=bands) for s in SEEDS]
        within = sum(t.within_bound for t in trials)
        medians[n] = float(np.median([t.symdiff for t in trials]))
        ok &= within >= 45
        lines.append(f"n={n}: {within}/50 within {trials[0].bound:.3f}, median {medians[n]:.3f}")
    ok &= medians[4000] < medians[1000]
    report(7, "gap level-set symmetric difference", ok, "; ".join(lines))


@pytest.mark.slow
def test_criterion_08_gap_clustering():
    n = 3000
    spec, h, a_n, gd = _gap_setup(n)
    facts = spec.facts
    gi = gap_inputs(n, 2, h, facts["lam_low"], facts["lam_high"], a_n)
    compliant = gi.h_ok and h <= facts["sigma"] / 4
    bands = dilate_erode(gd.region(facts["lam_high"]), 2 * h)
    passed = sum(bool(gap_levelset_trial(spec, n, s, h, a_n, gd, bands=bands).clusters_ok) for s in SEEDS)
    report(
        8, "gap cluster recovery",
        compliant and passed >= 45,
        f"h={h:.4f} (min {gi.h_min:.4f}, sigma/4 {facts['sigma'] / 4:.4f}), k={gi.k}; {passed}/50 (need 45)",
    )


def _univariate_moments(kernel, top: int) -> np.ndarray:
    # the factor is a polynomial on [-1, 1]; 32 Gauss nodes integrate it times u^s exactly
    x, w = np.polynomial.legendre.leggauss(32)
    k1 = kernel.univariate(x)
    return np.array([float(np.sum(w * k1 * x ** s)) for s in range(top + 1)])


def test_criterion_09_kernel_moments_and_mass():
    worst = 0.0
    built = 0
    for order in range(1, 7):
        for d in range(1, 4):
            build_valid_kernel.cache_clear()
            kernel = build_valid_kernel(order, d)
            built += 1
            mom = _univariate_moments(kernel, order - 1)
            for s in np.ndindex(*([order] * d)):
                if sum(s) > order - 1:
                    continue
                val = float(np.prod([mom[j] for j in s]))
                worst = max(worst, abs(val - (1.0 if sum(s) == 0 else 0.0)))
    ds = sample(get_spec("two_bump"), 500, 0)
    h = 0.1
    step = h / 50
    g = Grid.covering(ds.points.min() - 2 * h, ds.points.max() + 2 * h, step)
    mass = float(np.sum(kde_at(ds, SPHERICAL, g.centers(), h)) * step)
    report(
        9, "kernel moments and spherical estimate mass",
        worst <= 1e-8 and abs(mass - 1) <= 1e-3,
        f"{built} kernels, worst moment error {worst:.2e} (tol 1e-8); mass {mass:.6f} (tol 1e-3)",
    )


def test_criterion_10_gridded_estimate_inclusions():
    spec = get_spec("two_bump")
    n = 4000
    h = optimal_bandwidth(n, 1, 1.0)
    c = 2 * budget("two_bump", n, h, 1.0).a_n
    g = Grid.covering(spec.lo - 2 * h, spec.hi + 2 * h, 0.002)
    p = spec.pdf(g.centers())
    lams = np.arange(1, int(spec.sup / 0.002) + 1) * 0.002
    passed, worst = 0, 0.0
    for seed in SEEDS:
        est = kde_grid(sample(spec, n, seed), SPHERICAL, h, g).values.ravel()
        worst = max(worst, float(np.abs(est - p).max()))
        ok = all(
            not np.any((p >= lam + c) & (est < lam)) and not np.any((est >= lam) & (p < lam - c))
            for lam in lams
        )
        passed += ok
    report(
        10, "gridded estimate level-set inclusions",
        passed >= 45,
        f"{passed}/50 runs (need 45), margin {c:.4f}, largest grid deviation {worst:.4f}",
    )


def _tree(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_11_determinism(tmp_path):
    pts = np.random.default_rng(3).normal(size=(300, 2))
    data = tmp_path / "points.csv"
    data.write_text(cli.format_points(pts))
    configs = {
        "dbscan_gap": ["--synthetic", "two_bump", "--n", "500", "--seed", "4", "--alpha", "1",
                       "--cs", "1.0", "--gap", "0.0", "0.4", "--c1", "0.17"],
        "mdbscan": ["--synthetic", "gaussian_two_bump", "--n", "400", "--algorithm", "mdbscan",
                    "--alpha", "2", "--kernel-order", "2", "--prune-delta", "0.05"],
        "gridlevel": ["--input", str(data), "--algorithm", "gridlevel", "--h", "0.4"],
        "file_dbscan": ["--input", str(data), "--h", "0.3"],
        "rates": ["--synthetic", "two_bump", "--experiment", "rates", "--n-grid", "100,200",
                  "--seeds", "3", "--alpha", "1"],
        "gap": ["--synthetic", "gap_disk_square", "--experiment", "gap-levelset", "--n-grid", "1000",
                "--seeds", "2", "--c1", "0.12", "--c2", "0"],
    }
    same, total = 0, 0
    for name, args in configs.items():
        outs = []
        for rep in range(2):
            out = tmp_path / f"{name}_{rep}"
            assert cli.main(["run", *args, "--out", str(out)]) == 0, name
            outs.append(_tree(out))
        total += 1
        same += outs[0] == outs[1] and len(outs[0]) > 1
    report(11, "byte-identical artifacts on repeated runs", same == total, f"{same}/{total} configurations")
