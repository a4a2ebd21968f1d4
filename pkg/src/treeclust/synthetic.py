"""Ground-truth densities, rejection sampling and gridding.

Every density carries a bounding box, an upper bound on its values (used as
the rejection envelope) and a dictionary of known facts such as split
levels, Hölder constants and cluster geometry. Registered densities are
checked against a grid oracle the first time they are requested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as nppoly
from scipy.special import ndtr

from .cluster_tree import true_split_levels
from .exceptions import ConstructionError, EnvelopeError, ParameterError, UnsupportedDimensionError
from .geometry import Dataset, as_points
from .kde import gauss_legendre_rule, unit_ball_volume
from .levelset import Ball, Box, Grid, GriddedDensity, UnionRegion, grid_levelset_components

__all__ = [
    "DensitySpec",
    "lipschitz_two_bump",
    "gaussian_mixture",
    "uniform_density",
    "spline_profile",
    "spline_pair_density",
    "gap_density",
    "lower_bound_bump",
    "lower_bound_density",
    "sample",
    "grid",
    "validate_spec",
    "register",
    "get_spec",
    "registered_names",
]

MIN_ACCEPTANCE = 1e-4


@dataclass(frozen=True, eq=False)
class DensitySpec:
    """A bounded probability density with known structure.

    Parameters
    ----------
    name : str
    family : str
    dim : int
    lo, hi : ndarray
        Bounding box containing the support.
    sup : float
        Upper bound on the density.
    pdf : callable
        Maps an (m, dim) array to m density values.
    params : dict
        Construction parameters.
    facts : dict
        Known properties. Recognised keys include ``split_levels``, ``L``,
        ``alpha``, ``c_S``, ``mass`` (closed-form integral), ``clusters``,
        ``lam_low``, ``lam_high``, ``eps``, ``sigma`` and ``C0``.
    """

    name: str
    family: str
    dim: int
    lo: np.ndarray
    hi: np.ndarray
    sup: float
    pdf: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)
    facts: dict = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        return self.pdf(as_points(x, self.dim))

    @property
    def box(self) -> Box:
        return Box(self.lo, self.hi)


# -- one-dimensional families -------------------------------------------------


def lipschitz_two_bump(center: float = 1.0, width: float = 1.5) -> DensitySpec:
    """Piecewise linear bimodal density ``w max(0, 1 - ||x| - center| / width)``.

    Peaks sit at ``±center`` and the valley at 0 has height
    ``w (1 - center / width)``, which is the split level.
    """
    if not 0 < center < width:
        raise ParameterError("need 0 < center < width")
    weight = 1.0 / (center * (2.0 - center / width) + width)
    slope = weight / width

    def pdf(x):
        t = np.abs(np.abs(x[:, 0]) - center) / width
        return weight * np.maximum(0.0, 1.0 - t)

    reach = center + width
    return DensitySpec(
        "two_bump",
        "lipschitz_two_bump",
        1,
        np.array([-reach]),
        np.array([reach]),
        weight,
        pdf,
        {"center": center, "width": width},
        {
            "split_levels": [weight * (1.0 - center / width)],
            "peak": weight,
            "L": slope,
            "alpha": 1.0,
            "mass": 1.0,
        },
    )


def gaussian_mixture(means, sds, weights, name: str = "gaussian_mixture") -> DensitySpec:
    """One-dimensional Gaussian mixture truncated to ``[min mean - 6 sd, max mean + 6 sd]``."""
    means = np.asarray(means, dtype=float)
    sds = np.asarray(sds, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if not (means.shape == sds.shape == weights.shape) or np.any(sds <= 0) or np.any(weights <= 0):
        raise ParameterError("mixture needs matching positive sds and weights")
    weights = weights / weights.sum()

    def raw(x):
        z = (x[:, 0][:, None] - means) / sds
        return (weights / (sds * math.sqrt(2 * math.pi)) * np.exp(-0.5 * z * z)).sum(axis=1)

    lo = float((means - 6 * sds).min())
    hi = float((means + 6 * sds).max())
    # mass lost to truncation is put back by rescaling
    inside = float(sum(w * (ndtr((hi - m) / s) - ndtr((lo - m) / s)) for w, m, s in zip(weights, means, sds)))

    def pdf(x):
        v = raw(x) / inside
        return np.where((x[:, 0] >= lo) & (x[:, 0] <= hi), v, 0.0)

    facts: dict = {"mass": 1.0}
    # sup |p''| bound: |phi''| peaks at z = 0 with value phi(0)
    facts["L"] = float((weights / (sds ** 3 * math.sqrt(2 * math.pi))).sum() / inside)
    facts["alpha"] = 2.0
    if means.size == 2 and np.isclose(weights[0], weights[1]) and np.isclose(sds[0], sds[1]):
        mid = 0.5 * (means[0] + means[1])
        facts["split_levels"] = [float(pdf(np.array([[mid]]))[0])]
    return DensitySpec(
        name,
        "gaussian_mixture",
        1,
        np.array([lo]),
        np.array([hi]),
        float((weights / (sds * math.sqrt(2 * math.pi))).sum() / inside),
        pdf,
        {"means": means.tolist(), "sds": sds.tolist(), "weights": weights.tolist()},
        facts,
    )


def uniform_density(d: int = 1) -> DensitySpec:
    """Uniform density on the unit cube."""

    def pdf(x):
        return np.all((x >= 0) & (x <= 1), axis=1).astype(float)

    return DensitySpec(
        f"uniform_{d}d", "uniform", d, np.zeros(d), np.ones(d), 1.0, pdf, {}, {"split_levels": [], "mass": 1.0}
    )


# -- spline pair --------------------------------------------------------------


def spline_profile(alpha: int) -> tuple[np.ndarray, np.ndarray]:
    """Power-series coefficients of the radial profile on ``[0, 1]`` and ``[1, 2]``.

    The outer piece is ``(2 - r)^alpha``. The inner piece is the polynomial
    of degree ``2 alpha - 2`` whose first ``alpha - 1`` derivatives vanish at
    0 and which matches the outer piece to order ``alpha - 1`` at 1.
    """
    if int(alpha) != alpha or alpha < 2:
        raise ParameterError("alpha must be an integer >= 2")
    a = int(alpha)
    outer = nppoly.polypow([2.0, -1.0], a)
    deg = 2 * a - 2
    rows, rhs = [], []
    for j in range(1, a):
        row = np.zeros(deg + 1)
        row[j] = math.factorial(j)
        rows.append(row)
        rhs.append(0.0)
    for j in range(a):
        row = np.array([
            math.factorial(m) / math.factorial(m - j) if m >= j else 0.0 for m in range(deg + 1)
        ])
        rows.append(row)
        rhs.append(float(nppoly.polyval(1.0, nppoly.polyder(outer, j)) if j else nppoly.polyval(1.0, outer)))
    inner = np.linalg.solve(np.array(rows), np.array(rhs))
    return inner, outer


def _radial_profile(alpha: int) -> Callable[[np.ndarray], np.ndarray]:
    inner, outer = spline_profile(alpha)

    def f(r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= 1.0, nppoly.polyval(r, inner), np.where(r <= 2.0, nppoly.polyval(r, outer), 0.0))

    return f


def spline_pair_density(alpha: int = 2, d: int = 1) -> DensitySpec:
    """Two radial spline bumps centred at ``±(2, 0, ..., 0)`` touching at the origin.

    The unnormalised sum ``G`` satisfies ``{G >= t}`` = two balls of radius
    ``2 - t^(1/alpha)`` for ``0 < t <= 1``. The normalised density splits at
    level 0.
    """
    inner, outer = spline_profile(alpha)
    f = _radial_profile(alpha)
    nodes, weights = gauss_legendre_rule(0.0, 2.0)
    radial = float(np.sum(weights * f(nodes) * nodes ** (d - 1)))
    Z = 2.0 * d * unit_ball_volume(d) * radial
    x0 = np.zeros(d)
    x0[0] = 2.0

    def pdf(x):
        r1 = np.sqrt(((x - x0) ** 2).sum(axis=1))
        r2 = np.sqrt(((x + x0) ** 2).sum(axis=1))
        return (f(r1) + f(r2)) / Z

    # Hölder constant of the (alpha-1)-th derivative of the profile
    deriv = [nppoly.polyder(inner, int(alpha)), nppoly.polyder(outer, int(alpha))]
    r = np.linspace(0, 2, 4001)
    top = max(np.abs(nppoly.polyval(r[r <= 1], deriv[0])).max(), np.abs(nppoly.polyval(r[r >= 1], deriv[1])).max())
    lo = -np.full(d, 2.0)
    lo[0] = -4.0
    return DensitySpec(
        f"spline_pair_a{int(alpha)}" + ("" if d == 1 else f"_d{d}"),
        "spline_pair",
        d,
        lo,
        -lo,
        float(f(0.0)) / Z,
        pdf,
        {"alpha": int(alpha)},
        {
            "split_levels": [0.0],
            "L": float(top) / Z,
            "alpha": float(alpha),
            "Z": Z,
            "c_S": 2.0 * Z ** (1.0 / alpha),
            "mass": 1.0,
            "peak": float(f(0.0)) / Z,
        },
    )


# -- gap densities ------------------------------------------------------------


def _shape_distance(a, b) -> float:
    """Euclidean distance between two disjoint balls or boxes."""
    if isinstance(a, Ball) and isinstance(b, Ball):
        return max(0.0, float(np.linalg.norm(a.center - b.center)) - a.radius - b.radius)
    if isinstance(a, Ball):
        a, b = b, a
    if isinstance(b, Ball):
        return max(0.0, float(a.distance_to(b.center[None, :])[0]) - b.radius)
    gap = np.maximum(np.maximum(a.lo - b.hi, b.lo - a.hi), 0.0)
    return float(np.sqrt((gap ** 2).sum()))


def gap_density(
    shapes,
    lam_low: float,
    eps: float,
    background=((-3.0, -3.0), (3.0, 3.0)),
    name: str = "gap",
) -> DensitySpec:
    """Piecewise constant density with a gap between background and clusters.

    Before normalisation the density is ``lam_low + eps`` on the shapes,
    ``lam_low`` on the rest of the background box and 0 outside. The whole
    function is then scaled to integrate to one, so the stored facts
    ``lam_low``, ``lam_high`` and ``eps`` are the scaled heights.

    Parameters
    ----------
    shapes : list of Ball or Box
        Disjoint cluster shapes inside the background box, ``d = 2``.
    lam_low : float
        Relative background height, nonnegative.
    eps : float
        Relative gap, positive.
    background : pair of points
        Corners of the background box.
    """
    shapes = list(shapes)
    if not shapes:
        raise ParameterError("at least one shape is required")
    if any(s.dim != 2 for s in shapes):
        raise UnsupportedDimensionError("gap densities are two-dimensional")
    if not (eps > 0 and lam_low >= 0):
        raise ParameterError("need eps > 0 and lam_low >= 0")
    bg = Box(*background)
    sigma = math.inf
    for i in range(len(shapes)):
        for j in range(i + 1, len(shapes)):
            dist = _shape_distance(shapes[i], shapes[j])
            if dist <= 0:
                raise ParameterError("shapes must be disjoint with positive separation")
            sigma = min(sigma, dist)
    area = sum(s.volume for s in shapes)
    perimeter = sum(s.perimeter for s in shapes)
    scale = 1.0 / (lam_low * bg.volume + eps * area)
    union = UnionRegion(shapes)
    low, high = lam_low * scale, (lam_low + eps) * scale

    def pdf(x):
        return np.where(union.contains(x), high, np.where(bg.contains(x), low, 0.0))

    facts = {
        "lam_low": low,
        "lam_high": high,
        "eps": high - low,
        "sigma": sigma,
        "C0": unit_ball_volume(1) * perimeter,
        "S": union,
        "P_S": high * area,
        "clusters": len(shapes),
        "split_levels": [low] if len(shapes) > 1 and low > 0 else [],
        "mass": low * (bg.volume - area) + high * area,
    }
    return DensitySpec(
        name, "gap_density", 2, bg.lo.copy(), bg.hi.copy(), high, pdf,
        {"lam_low": lam_low, "eps": eps, "background": [list(map(float, c)) for c in background]},
        facts,
    )


# -- lower-bound family -------------------------------------------------------


def _bump_shape(alpha: float):
    # profile of the radial perturbation in units of its half-width, peak parameter delta = 1
    def psi(u):
        u = np.abs(u)
        rest = np.clip(1 - u, 0.0, None) ** alpha
        if alpha <= 1:
            return rest
        return np.where(u <= 0.5, 2 ** (1 - alpha) - u ** alpha, rest)

    def dpsi(u):
        s = np.sign(u)
        a = np.abs(u)
        outer = np.where(a <= 1, -alpha * np.clip(1 - a, 0.0, None) ** (alpha - 1), 0.0)
        return np.where(a <= 0.5, -alpha * a ** (alpha - 1), outer) * s

    return psi, dpsi


def _holder_quotient(alpha: float, points: int = 1601) -> float:
    psi, dpsi = _bump_shape(alpha)
    m = max(0, math.ceil(alpha) - 1)
    beta = alpha - m
    u = np.linspace(-1.2, 1.2, points)
    vals = psi(u) if m == 0 else dpsi(u)
    diff = np.abs(vals[:, None] - vals[None, :])
    dist = np.abs(u[:, None] - u[None, :]) ** beta
    np.fill_diagonal(dist, np.inf)
    return float((diff / dist).max())


def lower_bound_bump(alpha: float, delta: float, b: float, L: float = 1.0):
    """Radial perturbation supported on the shell ``b < r < b + 2 s``.

    Returns the function, the scale ``K`` and the half-width ``s = (delta / K)^(1/alpha)``.
    """
    if not 0 < alpha <= 2:
        raise ParameterError("the perturbation is Hölder smooth only for alpha in (0, 2]")
    psi, _ = _bump_shape(alpha)
    K = 0.9 * min(1.0, L / _holder_quotient(alpha))
    s = (delta / K) ** (1.0 / alpha)

    def g(r):
        r = np.asarray(r, dtype=float)
        return delta * psi((r - b - s) / s)

    return g, K, s


def lower_bound_density(
    alpha: float,
    delta: float,
    n: int,
    i: int,
    d: int = 1,
    lam: float = 1.0,
    L: float = 1.0,
) -> DensitySpec:
    """Member ``i`` (1..8) of the perturbed-uniform family used for minimax lower bounds.

    The base density is ``lam`` on ``[0, 56 a] x [0, 8 a]^(d-1)`` with
    ``56 lam 8^(d-1) a^d = 1``. Member ``i`` removes a radial shell bump at
    centre ``x_i`` and adds the same bump at ``x_0``.
    """
    if i not in range(1, 9):
        raise ParameterError("member index must lie in 1..8")
    if not 0 < alpha <= 2:
        raise ParameterError("alpha must lie in (0, 2]")
    a = (1.0 / (56.0 * lam * 8.0 ** (d - 1))) ** (1.0 / d)
    Vd = unit_ball_volume(d)
    if n < 4 ** d * 8 * math.log(32) / Vd:
        raise ParameterError("n is below the admissible range")
    b = (math.log(32) / (n * lam * Vd)) ** (1.0 / d)
    g, K, s = lower_bound_bump(alpha, delta, b, L)
    if not 0 < delta <= K / (16 ** alpha * (7 * lam) ** (alpha / d)):
        raise ParameterError("delta is outside the admissible range")
    centers = np.zeros((9, d))
    centers[:, 0] = a * (4 + 6 * np.arange(9))
    centers[:, 1:] = 4 * a
    hi = np.full(d, 8 * a)
    hi[0] = 56 * a
    ci, c0 = centers[i], centers[0]

    def pdf(x):
        inside = np.all((x >= 0) & (x <= hi), axis=1)
        ri = np.sqrt(((x - ci) ** 2).sum(axis=1))
        r0 = np.sqrt(((x - c0) ** 2).sum(axis=1))
        return np.where(inside, lam - g(ri) + g(r0), 0.0)

    peak = delta if alpha <= 1 else 2 ** (1 - alpha) * delta
    return DensitySpec(
        f"lower_bound_{i}",
        "lower_bound_family",
        d,
        np.zeros(d),
        hi,
        lam + peak,
        pdf,
        {"alpha": alpha, "delta": delta, "n": n, "i": i, "lam": lam, "L": L},
        {
            "a": a,
            "b": b,
            "K": K,
            "s": s,
            "centers": centers,
            "bump_peak": peak,
            # the removed shell cuts the base level set into the inner ball and the rest
            "components_at_lam": 3 if d == 1 else 2,
            "mass": 1.0,
        },
    )


# -- sampling and gridding ----------------------------------------------------


def sample(spec: DensitySpec, n: int, seed: int) -> Dataset:
    """Draw ``n`` points by rejection against the uniform envelope on the bounding box."""
    if n < 1:
        raise ParameterError("n must be at least 1")
    volume = float(np.prod(spec.hi - spec.lo))
    rate = 1.0 / (spec.sup * volume)
    if rate < MIN_ACCEPTANCE:
        raise EnvelopeError(f"acceptance rate {rate:.2e} is below {MIN_ACCEPTANCE}")
    rng = np.random.default_rng(seed)
    parts, got = [], 0
    while got < n:
        m = max(256, int(1.2 * (n - got) / rate))
        x = spec.lo + rng.random((m, spec.dim)) * (spec.hi - spec.lo)
        u = rng.random(m) * spec.sup
        keep = x[u < spec.pdf(x)]
        parts.append(keep)
        got += keep.shape[0]
    return Dataset(np.concatenate(parts)[:n])


def grid(spec: DensitySpec, step: float) -> GriddedDensity:
    """Density evaluated at the cell centres of a grid over the bounding box."""
    if not step > 0:
        raise ParameterError("step must be positive")
    if spec.dim > 2:
        raise UnsupportedDimensionError("gridding is restricted to d <= 2")
    g = Grid.covering(spec.lo, spec.hi, step)
    return GriddedDensity(g, spec.pdf(g.centers()).reshape(g.shape))


def validate_spec(spec: DensitySpec, step: float | None = None) -> None:
    """Check normalisation, nonnegativity and declared split levels on a grid.

    Raises
    ------
    ConstructionError
        If a declared fact disagrees with the grid oracle.
    """
    mass = spec.facts.get("mass")
    if mass is not None and abs(mass - 1.0) > 1e-9:
        raise ConstructionError(f"{spec.name}: closed-form mass {mass} differs from 1")
    if spec.dim > 2:
        return
    if step is None:
        step = 0.001 if spec.dim == 1 else 0.02
    gd = grid(spec, step)
    if np.any(gd.values < 0):
        raise ConstructionError(f"{spec.name}: negative density values")
    if np.any(gd.values > spec.sup * (1 + 1e-12)):
        raise ConstructionError(f"{spec.name}: envelope is below the density")
    declared = spec.facts.get("split_levels")
    if declared is None:
        return
    found = true_split_levels(gd)
    if len(found) != len(declared):
        raise ConstructionError(f"{spec.name}: declared {len(declared)} splits, grid finds {len(found)}")
    # a split can move by one value gap or by the largest change across one cell face
    jump = max(float(np.abs(np.diff(gd.values, axis=ax)).max(initial=0.0)) for ax in range(gd.dim))
    for lam, split in zip(sorted(declared), found):
        tol = max(split.upper - split.level, jump)
        if abs(lam - split.level) > tol:
            raise ConstructionError(f"{spec.name}: split {lam} vs grid {split.level} (tolerance {tol})")
    if spec.family == "gap_density":
        comps = grid_levelset_components(gd, spec.facts["lam_high"]).count
        if comps != spec.facts["clusters"]:
            raise ConstructionError(f"{spec.name}: {comps} grid clusters, declared {spec.facts['clusters']}")


_FACTORIES: dict[str, Callable[[], DensitySpec]] = {}


def register(name: str, factory: Callable[[], DensitySpec]) -> None:
    """Add a named density to the registry."""
    _FACTORIES[name] = factory
    get_spec.cache_clear()


@lru_cache(maxsize=None)
def get_spec(name: str) -> DensitySpec:
    """Registered density by name, validated on first access."""
    try:
        spec = _FACTORIES[name]()
    except KeyError:
        raise ParameterError(f"unknown density {name!r}; known: {', '.join(sorted(_FACTORIES))}") from None
    validate_spec(spec)
    return spec


def registered_names() -> list[str]:
    return sorted(_FACTORIES)


def _gap_disk_square() -> DensitySpec:
    shapes = [Ball((-1.0, -1.0), 0.7), Box((0.5, 0.5), (1.5, 1.5))]
    return gap_density(shapes, 0.02, 0.5, name="gap_disk_square")


def _named(spec: DensitySpec, name: str) -> DensitySpec:
    return DensitySpec(name, spec.family, spec.dim, spec.lo, spec.hi, spec.sup, spec.pdf, spec.params, spec.facts)


register("two_bump", lipschitz_two_bump)
register("gaussian_two_bump", lambda: gaussian_mixture([-1.5, 1.5], [0.5, 0.5], [0.5, 0.5], name="gaussian_two_bump"))
register("gaussian_mixture", lambda: gaussian_mixture([-2.0, 2.0], [0.5, 0.5], [0.5, 0.5]))
register("spline_pair_a2", lambda: spline_pair_density(2, 1))
register("spline_pair_a3", lambda: spline_pair_density(3, 1))
register("spline_pair_a2_d2", lambda: spline_pair_density(2, 2))
register("gap_disk_square", _gap_disk_square)
register("uniform_1d", lambda: uniform_density(1))
register("uniform_2d", lambda: uniform_density(2))
