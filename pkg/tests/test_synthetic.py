from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial import polynomial as nppoly
from scipy import integrate, stats

from treeclust.exceptions import ConstructionError, EnvelopeError, ParameterError, UnsupportedDimensionError
from treeclust.levelset import Ball, Box, grid_levelset_components
from treeclust.synthetic import (
    DensitySpec,
    gap_density,
    gaussian_mixture,
    get_spec,
    grid,
    lower_bound_bump,
    lower_bound_density,
    registered_names,
    sample,
    spline_pair_density,
    spline_profile,
    validate_spec,
)


def quad_mass(spec: DensitySpec) -> float:
    f = lambda t: float(spec(np.array([[t]]))[0])
    edges = np.linspace(spec.lo[0], spec.hi[0], 41)
    return sum(integrate.quad(f, a, b, limit=200)[0] for a, b in zip(edges, edges[1:]))


# -- one-dimensional families ----------------------------------------------------------


def test_two_bump_peaks_and_valley():
    spec = get_spec("two_bump")
    vals = spec(np.array([[-1.0], [0.0], [1.0], [2.5], [3.0]]))
    assert vals[0] == vals[2] == spec.facts["peak"]
    assert vals[1] == pytest.approx(spec.facts["split_levels"][0], rel=1e-15)
    assert vals[3] == vals[4] == 0.0


@pytest.mark.parametrize("name", ["two_bump", "gaussian_two_bump", "gaussian_mixture", "spline_pair_a2", "spline_pair_a3"])
def test_one_dimensional_mass_by_quadrature(name):
    assert quad_mass(get_spec(name)) == pytest.approx(1.0, abs=1e-8)


def test_gaussian_mixture_matches_scipy():
    spec = gaussian_mixture([-1.0, 2.0], [0.5, 1.0], [0.3, 0.7], name="mix")
    x = np.linspace(-2, 4, 61)
    want = 0.3 * stats.norm.pdf(x, -1, 0.5) + 0.7 * stats.norm.pdf(x, 2, 1.0)
    assert np.allclose(spec(x[:, None]), want, rtol=1e-8)


def test_gaussian_two_bump_split_at_midpoint():
    spec = get_spec("gaussian_two_bump")
    assert spec.facts["split_levels"][0] == pytest.approx(float(spec(np.array([[0.0]]))[0]), rel=1e-12)


# -- spline pairs -----------------------------------------------------------------------


@pytest.mark.parametrize("alpha", [2, 3, 4])
def test_spline_profile_smoothness(alpha):
    inner, outer = spline_profile(alpha)
    for j in range(alpha):
        at_one = nppoly.polyval(1.0, nppoly.polyder(inner, j)), nppoly.polyval(1.0, nppoly.polyder(outer, j))
        assert at_one[0] == pytest.approx(at_one[1], abs=1e-10)
        assert nppoly.polyval(2.0, nppoly.polyder(outer, j)) == pytest.approx(0.0, abs=1e-12)
        if j >= 1:
            assert nppoly.polyval(0.0, nppoly.polyder(inner, j)) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("alpha", [2, 3])
def test_spline_superlevel_radius(alpha):
    # unnormalised superlevel set at t is a pair of balls of radius 2 - t^(1/alpha)
    spec = get_spec(f"spline_pair_a{alpha}")
    Z = spec.facts["Z"]
    for t in (0.05, 0.3, 0.9):
        r = 2 - t ** (1 / alpha)
        assert float(spec(np.array([[2.0 + r]]))[0]) * Z == pytest.approx(t, rel=1e-10)
        assert float(spec(np.array([[2.0 + r - 1e-6]]))[0]) * Z > t


def test_spline_profile_rejects_non_integer():
    with pytest.raises(ParameterError):
        spline_profile(2.5)


def test_two_dimensional_spline_mass_in_polar_form():
    spec = get_spec("spline_pair_a2_d2")
    inner, outer = spline_profile(2)
    radial = integrate.quad(lambda r: nppoly.polyval(r, inner) * r, 0, 1)[0]
    radial += integrate.quad(lambda r: nppoly.polyval(r, outer) * r, 1, 2)[0]
    assert spec.facts["Z"] == pytest.approx(2 * 2 * math.pi * radial, rel=1e-12)


def test_spline_level_set_has_two_separated_balls():
    spec = get_spec("spline_pair_a2_d2")
    gd = grid(spec, 0.02)
    comp = grid_levelset_components(gd, 0.25 / spec.facts["Z"])
    assert comp.count == 2
    centers = gd.grid.centers()
    labels = comp.grid_labels.ravel()
    cents = [centers[labels == c].mean(axis=0) for c in (1, 2)]
    assert np.linalg.norm(cents[0] - cents[1]) == pytest.approx(4.0, abs=0.02)


def test_spline_split_margin_matches_ball_gap():
    # at unnormalised level t the two balls are 2 t^(1/alpha) apart
    spec = spline_pair_density(2, 1)
    Z = spec.facts["Z"]
    t = 0.16
    x = np.linspace(-4, 4, 80001)
    above = x[spec(x[:, None]) * Z >= t]
    inner_gap = above[above > 0].min() - above[above < 0].max()
    assert inner_gap == pytest.approx(2 * t ** 0.5, abs=2e-4)


# -- gap densities -------------------------------------------------------------------------


def test_single_shape_has_infinite_separation():
    spec = gap_density([Ball((0.0, 0.0), 1.0)], 0.1, 0.5)
    assert spec.facts["sigma"] == math.inf and spec.facts["split_levels"] == []


def test_disk_square_separation_against_boundary_sampling():
    spec = get_spec("gap_disk_square")
    theta = np.linspace(0, 2 * math.pi, 20001)
    disk = np.stack([-1 + 0.7 * np.cos(theta), -1 + 0.7 * np.sin(theta)], 1)
    t = np.linspace(0.5, 1.5, 2001)
    square = np.concatenate([np.stack([t, np.full_like(t, 0.5)], 1), np.stack([np.full_like(t, 0.5), t], 1)])
    brute = min(np.sqrt(((disk[:, None] - s) ** 2).sum(-1)).min() for s in np.array_split(square, 20))
    assert spec.facts["sigma"] == pytest.approx(brute, abs=1e-4)
    assert spec.facts["sigma"] == pytest.approx(1.5 * math.sqrt(2) - 0.7, rel=1e-12)


def test_gap_density_integrates_to_one():
    spec = get_spec("gap_disk_square")
    step = 0.005
    gd = grid(spec, step)
    perimeter = 2 * math.pi * 0.7 + 4.0
    assert gd.values.sum() * step ** 2 == pytest.approx(1.0, abs=2 * perimeter * step * spec.sup)


def test_gap_density_heights():
    spec = get_spec("gap_disk_square")
    vals = spec(np.array([[-1.0, -1.0], [1.0, 1.0], [0.0, 2.5], [3.5, 0.0]]))
    lo, hi = spec.facts["lam_low"], spec.facts["lam_high"]
    assert vals.tolist() == [hi, hi, lo, 0.0]
    assert hi - lo == spec.facts["eps"]


def test_gap_density_rejects_touching_shapes():
    with pytest.raises(ParameterError):
        gap_density([Box((0.0, 0.0), (1.0, 1.0)), Box((1.0, 0.0), (2.0, 1.0))], 0.1, 0.5)


def test_gap_density_is_two_dimensional():
    with pytest.raises(UnsupportedDimensionError):
        gap_density([Ball((0.0, 0.0, 0.0), 1.0)], 0.1, 0.5)


# -- lower-bound family ---------------------------------------------------------------------


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5, 2.0])
def test_lower_bound_bump_support_and_peak(alpha):
    g, K, s = lower_bound_bump(alpha, 0.01, 0.3)
    r = np.linspace(0, 0.3 + 2 * s + 0.1, 20001)
    v = g(r)
    assert np.all(v[r <= 0.3] == 0.0) and np.all(v[r >= 0.3 + 2 * s] == 0.0)
    peak = 0.01 if alpha <= 1 else 2 ** (1 - alpha) * 0.01
    assert v.max() <= peak and float(g(0.3 + s)) == pytest.approx(peak, rel=1e-12)
    assert s == pytest.approx((0.01 / K) ** (1 / alpha), rel=1e-15)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5, 2.0])
def test_lower_bound_bump_holder_certificate(alpha):
    L = 1.0
    g, _, s = lower_bound_bump(alpha, 0.01, 0.3, L)
    rng = np.random.default_rng(0)
    r = rng.uniform(0.25, 0.35 + 2 * s, 100_000)
    t = rng.uniform(0, 2 * s, 100_000)
    if alpha <= 1:
        assert np.all(np.abs(g(r + t) - g(r)) <= L * t ** alpha * (1 + 1e-9) + 1e-15)
    else:
        # second differences of a function whose derivative is Hölder
        second = g(r + t) - 2 * g(r) + g(r - t)
        assert np.all(np.abs(second) <= L * t ** alpha * (1 + 1e-9) + 1e-15)


def test_lower_bound_members_are_densities_and_differ_locally():
    members = [lower_bound_density(1.0, 0.005, 1000, i) for i in (1, 2)]
    a = members[0]
    x = np.linspace(0, a.hi[0], 400_001)
    dx = x[1] - x[0]
    v = [m(x[:, None]) for m in members]
    for vi in v:
        assert np.trapezoid(vi, dx=dx) == pytest.approx(1.0, abs=1e-6)
        assert vi.min() >= 0
    differ = x[v[0] != v[1]]
    c, s, b = a.facts["centers"], a.facts["s"], a.facts["b"]
    reach = b + 2 * s
    near = (np.abs(differ - c[1, 0]) <= reach) | (np.abs(differ - c[2, 0]) <= reach)
    assert near.all()


def test_lower_bound_parameter_ranges():
    with pytest.raises(ParameterError):
        lower_bound_density(1.0, 0.005, 1000, 9)
    with pytest.raises(ParameterError):
        lower_bound_density(1.0, 0.005, 10, 1)
    with pytest.raises(ParameterError):
        lower_bound_density(1.0, 0.5, 1000, 1)


# -- sampling and gridding -----------------------------------------------------------------------


def test_uniform_sample_mean():
    n = 20_000
    x = sample(get_spec("uniform_1d"), n, 0).points[:, 0]
    assert abs(x.mean() - 0.5) <= 4 * math.sqrt(1 / 12 / n)
    assert x.min() >= 0 and x.max() <= 1


def test_gap_sample_fraction_in_clusters():
    spec = get_spec("gap_disk_square")
    n = 20_000
    frac = spec.facts["S"].contains(sample(spec, n, 1).points).mean()
    p = spec.facts["P_S"]
    assert abs(frac - p) <= 4 * math.sqrt(p * (1 - p) / n)


@given(st.integers(0, 10 ** 6), st.integers(1, 300))
def test_sampling_is_deterministic(seed, n):
    spec = get_spec("two_bump")
    a, b = sample(spec, n, seed), sample(spec, n, seed)
    assert a.n == n and np.array_equal(a.points, b.points)


def test_sampling_parameter_checks():
    with pytest.raises(ParameterError):
        sample(get_spec("uniform_1d"), 0, 0)
    thin = dataclasses.replace(get_spec("uniform_1d"), sup=1e5)
    with pytest.raises(EnvelopeError):
        sample(thin, 10, 0)


def test_grid_of_constant_density():
    gd = grid(get_spec("uniform_2d"), 0.1)
    assert gd.values.shape == (10, 10) and np.all(gd.values == 1.0)


def test_grid_values_are_pointwise_density():
    spec = get_spec("gaussian_mixture")
    gd = grid(spec, 0.01)
    exact = spec(gd.grid.centers()).reshape(gd.grid.shape)
    # values are snapped to a lattice of spacing 2^-40 times the maximum
    assert np.abs(gd.values - exact).max() <= exact.max() * 2.0 ** -41


def test_grid_mass_converges_under_refinement():
    spec = get_spec("two_bump")
    errs = [abs(grid(spec, s).values.sum() * s - 1.0) for s in (0.1, 0.01, 0.001)]
    assert errs[2] <= errs[1] <= errs[0] and errs[2] < 1e-5


def test_grid_rejects_three_dimensions():
    with pytest.raises(UnsupportedDimensionError):
        grid(spline_pair_density(2, 3), 0.1)


# -- registry and validation ----------------------------------------------------------------------


def test_registry_contains_fixtures():
    names = registered_names()
    for name in ("two_bump", "gaussian_two_bump", "spline_pair_a2", "gap_disk_square", "uniform_2d"):
        assert name in names
        assert get_spec(name).name == name


def test_unknown_name():
    with pytest.raises(ParameterError, match="known"):
        get_spec("no_such_density")


def test_validation_catches_wrong_facts():
    spec = get_spec("two_bump")
    with pytest.raises(ConstructionError):
        validate_spec(dataclasses.replace(spec, facts={**spec.facts, "split_levels": [0.2]}))
    with pytest.raises(ConstructionError):
        validate_spec(dataclasses.replace(spec, facts={**spec.facts, "split_levels": []}))
    with pytest.raises(ConstructionError):
        validate_spec(dataclasses.replace(spec, facts={**spec.facts, "mass": 0.9}))
    with pytest.raises(ConstructionError):
        validate_spec(dataclasses.replace(spec, sup=0.5 * spec.sup))
