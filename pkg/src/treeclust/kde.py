"""Kernel density estimation with spherical and higher-order product kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np
from numpy.polynomial import legendre as npleg
from numpy.polynomial import polynomial as nppoly

from .exceptions import ConstructionError, InvalidInputError, ParameterError, PreconditionError
from .geometry import Dataset, as_points

__all__ = [
    "Kernel",
    "SPHERICAL",
    "DensityEstimate",
    "ErrorBudget",
    "unit_ball_volume",
    "spherical_kde_at",
    "build_valid_kernel",
    "kde_at",
    "estimate_density",
    "optimal_bandwidth",
    "error_budget",
    "gauss_legendre_rule",
]

MOMENT_TOL = 1e-8
NODES_PER_UNIT = 64


def unit_ball_volume(d: int) -> float:
    """Volume of the Euclidean unit ball in R^d."""
    if int(d) != d or d < 1:
        raise ParameterError("dimension must be a positive integer")
    # two-step recurrence keeps V_1 = 2 and V_2 = pi exact
    vol = 2.0 if d % 2 else math.pi
    for m in range(3 if d % 2 else 4, int(d) + 1, 2):
        vol *= 2.0 * math.pi / m
    return vol


@dataclass(frozen=True)
class Kernel:
    """Density estimation kernel.

    Parameters
    ----------
    kind : {"spherical", "valid"}
        ``"spherical"`` is the indicator of the closed Euclidean unit ball.
        ``"valid"`` is a product of a univariate polynomial kernel supported
        on ``[-1, 1]``.
    order : int
        Number of vanishing moment orders plus one (``valid`` kernels only).
    dim : int or None
        Dimension the kernel was validated for; ``None`` for the spherical kernel.
    coef : tuple of float
        Power-series coefficients of the univariate factor, lowest degree first.
    """

    kind: str
    order: int = 0
    dim: int | None = None
    coef: tuple = field(default=(), repr=False)

    @property
    def support(self) -> str:
        return "ball" if self.kind == "spherical" else "cube"

    def univariate(self, t) -> np.ndarray:
        """Univariate factor evaluated at ``t`` (zero outside ``[-1, 1]``)."""
        t = np.asarray(t, dtype=float)
        if self.kind == "spherical":
            return (np.abs(t) <= 1.0).astype(float)
        return np.where(np.abs(t) <= 1.0, nppoly.polyval(t, self.coef), 0.0)

    def __call__(self, u) -> np.ndarray:
        """Evaluate the kernel at rows of ``u`` (shape (m, d))."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if self.kind == "spherical":
            return (np.sqrt(np.einsum("ij,ij->i", u, u)) <= 1.0).astype(float)
        return np.prod(self.univariate(u), axis=1)


SPHERICAL = Kernel("spherical")


def gauss_legendre_rule(lo: float = -1.0, hi: float = 1.0, per_unit: int = NODES_PER_UNIT):
    """Composite Gauss-Legendre nodes and weights with ``per_unit`` nodes per unit length."""
    panels = max(1, int(math.ceil(hi - lo)))
    x, w = npleg.leggauss(per_unit)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _univariate_coefficients(order: int) -> np.ndarray:
    # sum over m of phi_m(0) phi_m(u) with phi_m = sqrt((2m+1)/2) P_m
    leg = np.zeros(order + 1)
    for m in range(order + 1):
        unit = np.zeros(m + 1)
        unit[m] = 1.0
        leg[m] = (2 * m + 1) / 2.0 * npleg.legval(0.0, unit)
    return npleg.leg2poly(leg)


def _check_moments(kernel: Kernel, order: int, d: int) -> None:
    nodes, weights = gauss_legendre_rule()
    k1 = kernel.univariate(nodes)
    # full tensor-product kernel values times quadrature weights
    weighted = np.ones([nodes.size] * d)
    for axis in range(d):
        shape = [1] * d
        shape[axis] = nodes.size
        weighted = weighted * (weights * k1).reshape(shape)
    powers = [nodes ** p for p in range(order)]
    for s in product(range(order), repeat=d):
        if sum(s) > max(order - 1, 0):
            continue
        val = weighted
        for axis in range(d - 1, -1, -1):
            val = val @ powers[s[axis]]
        target = 1.0 if sum(s) == 0 else 0.0
        if not abs(float(val) - target) <= MOMENT_TOL:
            raise ConstructionError(
                f"moment {s} of the order-{order} kernel is {float(val):.3e}, expected {target}"
            )


@lru_cache(maxsize=None)
def build_valid_kernel(order: int, d: int) -> Kernel:
    """Product polynomial kernel whose moments vanish up to ``order - 1``.

    The univariate factor is the reproducing kernel at zero of polynomials of
    degree ``order`` in the orthonormal Legendre basis of ``L^2[-1, 1]``.
    Moments are checked on construction by tensorized Gauss-Legendre
    quadrature; a failure raises :class:`ConstructionError`.

    Parameters
    ----------
    order : int
        Kernel order, at least 1.
    d : int
        Dimension.

    Returns
    -------
    Kernel
    """
    if int(order) != order or order < 1:
        raise ParameterError("kernel order must be a positive integer")
    if int(d) != d or d < 1:
        raise ParameterError("dimension must be a positive integer")
    kernel = Kernel("valid", int(order), int(d), tuple(float(c) for c in _univariate_coefficients(order)))
    _check_moments(kernel, int(order), int(d))
    return kernel


def _query_points(ds: Dataset, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 0 or (arr.ndim == 1 and (ds.dim > 1 or arr.size == 1))
    if single and arr.ndim == 1 and arr.size != ds.dim:
        raise InvalidInputError(f"dimension mismatch: expected {ds.dim}, got {arr.size}")
    return as_points(arr, ds.dim), single


def spherical_kde_at(ds: Dataset, x, h: float):
    """Spherical kernel estimate ``|B(x, h) ∩ sample| / (n h^d V_d)``.

    Returns a float for a single query point and an array otherwise.
    """
    if not h > 0:
        raise ParameterError("bandwidth must be positive")
    q, single = _query_points(ds, x)
    counts = ds.index.counts(q, h)
    vals = counts / (ds.n * h ** ds.dim * unit_ball_volume(ds.dim))
    return float(vals[0]) if single else vals


def kde_at(ds: Dataset, kernel: Kernel, x, h: float):
    """Kernel density estimate at ``x``.

    The spherical kernel is normalised by the unit ball volume so the result
    coincides with :func:`spherical_kde_at`. Valid kernels are not clipped and
    may return negative values.
    """
    if kernel.kind == "spherical":
        return spherical_kde_at(ds, x, h)
    if not h > 0:
        raise ParameterError("bandwidth must be positive")
    if kernel.dim is not None and kernel.dim != ds.dim:
        raise InvalidInputError(f"kernel built for d={kernel.dim}, data has d={ds.dim}")
    q, single = _query_points(ds, x)
    qi, di = ds.index.pairs(q, h, metric="chebyshev", sort=False)
    weights = kernel((q[qi] - ds.points[di]) / h)
    vals = np.bincount(qi, weights=weights, minlength=q.shape[0]) / (ds.n * h ** ds.dim)
    return float(vals[0]) if single else vals


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    """Kernel estimate evaluated at every sample point."""

    dataset: Dataset
    kernel: Kernel
    h: float
    values: np.ndarray


def estimate_density(ds: Dataset, kernel: Kernel, h: float) -> DensityEstimate:
    """Evaluate the estimate once at all sample points."""
    vals = np.asarray(kde_at(ds, kernel, ds.points, h), dtype=float)
    vals.setflags(write=False)
    return DensityEstimate(ds, kernel, float(h), vals)


def optimal_bandwidth(n: int, d: int, alpha: float, C: float = 1.0) -> float:
    """Rate-optimal bandwidth ``C (log n / n)^(1 / (2 alpha + d))``."""
    if n < 2:
        raise ParameterError("bandwidth rule needs n >= 2")
    if not (alpha > 0 and C > 0):
        raise ParameterError("alpha and C must be positive")
    if math.isinf(alpha):
        return float(C)
    return C * (math.log(n) / n) ** (1.0 / (2.0 * alpha + d))


@dataclass(frozen=True)
class ErrorBudget:
    """Uniform deviation bound ``a_n`` of a kernel estimate.

    All inputs are stored and ``a_n`` is recomputed on access.
    """

    n: int
    h: float
    d: int
    alpha: float
    L: float
    gamma: float
    C1: float
    C2: float

    @property
    def variance_term(self) -> float:
        return self.C1 * (self.gamma + math.log(1.0 / self.h)) / math.sqrt(self.n * self.h ** self.d)

    @property
    def bias_term(self) -> float:
        if self.C2 == 0:
            return 0.0
        return self.C2 * self.h ** self.alpha

    @property
    def a_n(self) -> float:
        return self.variance_term + self.bias_term


def error_budget(
    n: int,
    h: float,
    d: int,
    alpha: float,
    L: float,
    gamma: float | None = None,
    C1: float = 1.0,
    C2: float | None = None,
) -> ErrorBudget:
    """Build an :class:`ErrorBudget`; defaults are ``gamma = log n`` and ``C2 = L``."""
    if not h > 0:
        raise ParameterError("bandwidth must be positive")
    if n * h ** d < 1:
        raise PreconditionError(f"n h^d = {n * h ** d:.4g} < 1")
    gamma = math.log(n) if gamma is None else float(gamma)
    C2 = float(L) if C2 is None else float(C2)
    return ErrorBudget(int(n), float(h), int(d), float(alpha), float(L), gamma, float(C1), C2)
