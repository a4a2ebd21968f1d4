from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from conftest import CALIBRATION
from treeclust.cluster_tree import true_split_levels
from treeclust.dbscan import dbscan_hierarchy
from treeclust.evaluation import (
    EMPTY,
    MERGED,
    SEPARATED,
    UNCONTAINED,
    ConsistencyReport,
    calibrate_constants,
    certify,
    check_delta_consistency,
    deviation_statistic,
    fit_hierarchy,
    fit_slope,
    gap_grid,
    make_separated_pairs,
    pair_outcome,
    rate_experiment,
    smoothed_density,
)
from treeclust.exceptions import ParameterError
from treeclust.geometry import Dataset
from treeclust.kde import SPHERICAL, build_valid_kernel, optimal_bandwidth
from treeclust.levelset import Grid, GriddedDensity
from treeclust.synthetic import get_spec, grid, sample


def smallest_cluster(hier, idx):
    """Members of the cluster at the highest level containing all of ``idx``, by scanning levels."""
    best = None
    for lam in hier.levels:
        for c in hier.clusters_at(lam):
            if set(idx) <= set(c.tolist()):
                best = set(c.tolist())
    return best


# -- separated pairs ------------------------------------------------------------------


def test_unimodal_density_has_no_pairs():
    g = Grid.covering([-4.0], [4.0], 0.01)
    gd = GriddedDensity(g, np.exp(-g.centers()[:, 0] ** 2))
    assert make_separated_pairs(gd, 0.05) == []


def test_mixture_gives_one_certified_pair():
    gd = grid(get_spec("gaussian_mixture"), 0.005)
    pairs = make_separated_pairs(gd, 0.1)
    assert len(pairs) == 1
    p = pairs[0]
    x = gd.grid.centers()[:, 0]
    a, b = sorted([x[p.mask_a.ravel()], x[p.mask_b.ravel()]], key=lambda v: v.mean())
    assert a.max() < 0 < b.min()
    # one-dimensional certificate: the gap between the regions dips to lam - delta
    between = gd.values[(x > a.max()) & (x < b.min())]
    assert between.min() <= p.lam - p.delta
    assert p.lam >= p.split_level + p.delta - 1e-12


def test_margin_above_the_peak_gives_no_pairs():
    gd = grid(get_spec("gaussian_mixture"), 0.005)
    assert make_separated_pairs(gd, float(gd.values.max())) == []


def test_margin_must_be_positive():
    gd = grid(get_spec("gaussian_mixture"), 0.01)
    with pytest.raises(ParameterError):
        make_separated_pairs(gd, 0.0)


def test_two_dimensional_pairs_recertify():
    gd = grid(get_spec("gap_disk_square"), 0.05)
    pairs = make_separated_pairs(gd, 0.1)
    assert len(pairs) == 1
    p = pairs[0]
    assert certify(gd, p.mask_a, p.mask_b, p.delta) == p.certificate
    assert not np.any(p.mask_a & p.mask_b)


# -- pair outcomes ----------------------------------------------------------------------


def test_outcome_examples():
    hier = dbscan_hierarchy(Dataset([0.0, 0.1, 5.0, 5.1]), 0.2)
    assert pair_outcome(hier, np.array([0, 1]), np.array([2, 3])) == SEPARATED
    assert pair_outcome(hier, np.array([], dtype=int), np.array([2])) == EMPTY
    assert pair_outcome(hier, np.array([0]), np.array([1])) == MERGED
    assert pair_outcome(hier, np.array([0, 2]), np.array([1])) == UNCONTAINED


def test_empty_report_succeeds():
    assert ConsistencyReport(()).success
    assert not ConsistencyReport((SEPARATED, UNCONTAINED)).success


@given(st.integers(0, 10 ** 6), st.integers(4, 40))
def test_outcome_matches_cluster_scan(seed, n):
    rng = np.random.default_rng(seed)
    hier = dbscan_hierarchy(Dataset(rng.random((n, 1))), 0.05)
    perm = rng.permutation(n)
    ka, kb = (int(v) for v in rng.integers(1, 4, 2))
    a, b = perm[:ka], perm[ka:ka + kb]
    if b.size == 0:
        return
    ca, cb = smallest_cluster(hier, a.tolist()), smallest_cluster(hier, b.tolist())
    if ca is None or cb is None:
        want = UNCONTAINED
    else:
        want = SEPARATED if not (ca & cb) else MERGED
    assert pair_outcome(hier, a, b) == want


def test_consistency_is_deterministic():
    spec = get_spec("two_bump")
    gd = grid(spec, 0.002)
    pairs = make_separated_pairs(gd, 0.1)
    ds = sample(spec, 500, 4)
    h = optimal_bandwidth(500, 1, 1.0)
    a = check_delta_consistency(dbscan_hierarchy(ds, h), pairs, ds)
    b = check_delta_consistency(dbscan_hierarchy(ds, h), pairs, ds)
    assert a == b and len(a.outcomes) == len(pairs)


def test_dbscan_consistent_at_calibrated_margin():
    spec = get_spec("two_bump")
    n = 2000
    h = optimal_bandwidth(n, 1, 1.0)
    delta = CALIBRATION["dbscan_delta"]["C"] * math.log(n) * n ** (-1 / 3)
    pairs = make_separated_pairs(grid(spec, 0.002), delta)
    assert pairs
    wins = 0
    for seed in range(50):
        ds = sample(spec, n, seed)
        wins += check_delta_consistency(dbscan_hierarchy(ds, h), pairs, ds).success
    assert wins >= 45


def test_fit_hierarchy_names():
    ds = Dataset([0.0, 1.0])
    assert fit_hierarchy(ds, "dbscan", 1.0).algorithm == "dbscan"
    with pytest.raises(ParameterError):
        fit_hierarchy(ds, "mdbscan", 1.0)
    with pytest.raises(ParameterError):
        fit_hierarchy(ds, "optics", 1.0)


# -- rate experiments ----------------------------------------------------------------------


def test_fit_slope_of_power_law():
    ns = np.array([100, 200, 400, 800])
    assert fit_slope(ns, 3.0 * ns ** -0.4) == pytest.approx(-0.4, rel=1e-12)
    assert fit_slope(ns, [math.inf, 0.5, 0.25, 0.125]) == pytest.approx(-1.0, rel=1e-12)
    assert math.isnan(fit_slope(ns, [1.0, math.inf, math.nan, 0.0]))


def test_small_rate_experiment():
    spec = get_spec("two_bump")
    res = rate_experiment(spec, "dbscan", [200, 400], range(6), alpha=1.0, workers=1)
    again = rate_experiment(spec, "dbscan", [200, 400], range(6), alpha=1.0, workers=1)
    assert res == again
    top = float(grid(spec, 0.002).values.max()) - spec.facts["split_levels"][0]
    for row in res.rows:
        assert 0 < row.delta_min <= top
        assert row.success_rate >= 0.9
        trace = res.trace[row.n]
        assert row.evaluations == len(trace)
        # below the chosen margin at least one recorded rate misses the target
        assert all(r < 0.9 for d, r in trace if d < row.delta_min) or row.delta_min == min(d for d, _ in trace)


def test_rate_experiment_needs_a_split():
    with pytest.raises(ParameterError):
        rate_experiment(get_spec("uniform_1d"), "dbscan", [100], [0], alpha=1.0)


# -- calibration helpers ---------------------------------------------------------------------


def test_smoothed_uniform_is_flat_inside():
    spec = get_spec("uniform_1d")
    g = Grid.covering([-0.2], [1.2], 0.001)
    sm = smoothed_density(spec, SPHERICAL, 0.1, g)
    x = g.centers()[:, 0]
    assert np.allclose(sm[(x > 0.15) & (x < 0.85)], 1.0, atol=1e-9)
    assert sm[np.argmin(np.abs(x))] == pytest.approx(0.5, abs=0.01)


def test_smoothed_density_against_quadrature():
    spec = get_spec("two_bump")
    k = build_valid_kernel(2, 1)
    h = 0.3
    g = Grid.covering([-3.0], [3.0], 0.001)
    sm = smoothed_density(spec, k, h, g)
    x = g.centers()[:, 0]
    for i in (1000, 2500, 3000, 4200):
        f = lambda u: float(k.univariate(np.array([u]))[0]) * float(spec(np.array([[x[i] - h * u]]))[0])
        want = integrate.quad(f, -1, 1, points=[(x[i] - c) / h for c in (-2.5, -1.0, 0.0, 1.0, 2.5) if abs(x[i] - c) < h])[0]
        # the kernel jumps at the edge of its support, so the Riemann sum is only first order
        tol = 2 * (g.step[0] / h) * 1.75 * spec.sup
        assert sm[i] == pytest.approx(want, abs=tol)


def test_calibrated_variance_constant_dominates_each_run():
    spec = get_spec("two_bump")
    consts = calibrate_constants(spec, SPHERICAL, [300], [0, 1, 2], alpha=1.0)
    h = optimal_bandwidth(300, 1, 1.0)
    stats = [deviation_statistic(spec, SPHERICAL, 300, h, s) for s in (0, 1, 2)]
    assert consts["C1"] == pytest.approx(max(stats), rel=1e-12)
    assert consts["C2"] > 0


def test_gap_grid_padding():
    spec = get_spec("gap_disk_square")
    gd = gap_grid(spec, 0.1, 0.5)
    assert gd.grid.lo[0] <= spec.lo[0] - 0.5 + 1e-12
    assert true_split_levels(gd)[0].level == pytest.approx(spec.facts["lam_low"], rel=1e-9)
