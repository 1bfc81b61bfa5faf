"""Kernel functions, bandwidth policies and local weight vectors.

Weights follow ``w_i = h**-2 * K(||s - s_i|| / h)`` with the Epanechnikov
profile ``K(x) = 0.75 * (1 - x**2)`` on ``[0, 1)``.

The nearest-neighbour bandwidth is resolved per location so that the
*unnormalised* mean kernel value ``mean_i K(||s - s_i|| / h)`` hits a target
ratio.  The ratio is bounded by ``K(0) = 0.75`` and is nondecreasing in
``h``, which is what makes the bisection well posed.  The ``h**-2`` factor is
applied only afterwards, when the weight vector is built.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate

from ._backend import core
from .errors import ConfigurationError, DegenerateNeighborhoodError, InputError, NumericalError

KERNEL_FAMILIES = ("epanechnikov",)


class Location(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True)
class KernelSpec:
    family: str = "epanechnikov"

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ConfigurationError("unknown kernel family %r (choose from %s)" % (self.family, KERNEL_FAMILIES))

    @property
    def peak(self):
        return float(self.profile(np.array([0.0]))[0])

    def profile(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x < 1.0, 0.75 * (1.0 - x * x), 0.0)


EPANECHNIKOV = KernelSpec()


@dataclass(frozen=True)
class BandwidthSpec:
    """Fixed bandwidth ``h`` or nearest-neighbour ratio ``target``."""

    mode: str
    value: float

    def __post_init__(self):
        if self.mode not in ("fixed", "nearest_neighbor"):
            raise ConfigurationError("bandwidth mode must be 'fixed' or 'nearest_neighbor', got %r" % self.mode)
        if not np.isfinite(self.value) or self.value <= 0:
            raise ConfigurationError("bandwidth value must be positive and finite, got %r" % self.value)

    @classmethod
    def fixed(cls, h):
        return cls("fixed", float(h))

    @classmethod
    def nearest_neighbor(cls, target):
        return cls("nearest_neighbor", float(target))


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    bandwidth_used: float
    support_count: int

    @property
    def support(self):
        return np.flatnonzero(self.weights > 0)


@dataclass(frozen=True)
class KernelMoments:
    kappa0: float
    kappa2: float
    nu0: float


def _as_location(s):
    s = np.asarray(s, dtype=float).reshape(-1)
    if s.shape != (2,) or not np.all(np.isfinite(s)):
        raise InputError("a location must be two finite coordinates, got %r" % (s,))
    return s


def _as_locations(locations):
    locs = np.asarray(locations, dtype=float)
    if locs.ndim != 2 or locs.shape[1] != 2 or locs.shape[0] < 1:
        raise InputError("locations must be an (n, 2) array with n >= 1, got shape %r" % (locs.shape,))
    if not np.all(np.isfinite(locs)):
        raise InputError("locations contain non-finite coordinates")
    return locs


def kernel_value(x, kernel=EPANECHNIKOV):
    """Kernel profile at a nonnegative scaled distance.

    >>> kernel_value(0.5)
    0.5625
    """
    x = float(x)
    if not np.isfinite(x) or x < 0:
        raise InputError("scaled distance must be finite and nonnegative, got %r" % x)
    return float(kernel.profile(x))


def distances(s, locations):
    s = _as_location(s)
    locs = _as_locations(locations)
    return np.sqrt(np.sum((locs - s) ** 2, axis=1))


def adaptive_bandwidth(s, locations, target, kernel=EPANECHNIKOV, dist=None):
    """Resolve a nearest-neighbour bandwidth at ``s``.

    Returns the largest ``h`` such that ``mean_i K(||s - s_i|| / h) <= target``;
    by continuity the achieved ratio equals the target to within ~1e-12
    whenever the target is attainable.  When even the smallest bracketed
    bandwidth overshoots (e.g. a single observation sitting on ``s``) the
    lower end of the bracket is returned.
    """
    target = float(target)
    if not np.isfinite(target) or target <= 0:
        raise ConfigurationError("nearest-neighbour target must be positive, got %r" % target)
    if target >= kernel.peak:
        raise ConfigurationError(
            "nearest-neighbour target %.4g is unattainable: the mean kernel ratio never exceeds K(0) = %.4g"
            % (target, kernel.peak)
        )
    if dist is None:
        dist = distances(s, locations)
    extent = float(np.max(dist))
    if extent <= 0.0:
        locs = _as_locations(locations)
        extent = float(np.hypot(*np.ptp(locs, axis=0))) or 1.0
    return float(core.nn_bandwidth(dist, target, 1e-6 * extent, 4.0 * extent))


def bandwidth_ratio(s, locations, h, kernel=EPANECHNIKOV):
    """``mean_i K(||s - s_i|| / h)``, the quantity the nearest-neighbour rule targets."""
    return float(np.mean(kernel.profile(distances(s, locations) / h)))


def local_weights(s, locations, bw, kernel=EPANECHNIKOV):
    """Kernel weight vector ``h**-2 K(||s - s_i|| / h)`` at location ``s``."""
    dist = distances(s, locations)
    if bw.mode == "fixed":
        h = bw.value
    else:
        h = adaptive_bandwidth(s, locations, bw.value, kernel, dist=dist)
    w = kernel.profile(dist / h) / (h * h)
    count = int(np.count_nonzero(w > 0))
    if count == 0:
        raise DegenerateNeighborhoodError(
            "no observation has positive kernel weight at location (%g, %g) with h = %g" % (s[0], s[1], h)
        )
    return WeightVector(w, float(h), count)


def kernel_moments(kernel=EPANECHNIKOV):
    """Planar kernel integrals ``kappa0``, ``kappa2`` and ``nu0`` by polar quadrature.

    For a radial kernel supported on the unit disc,
    ``kappa0 = 2*pi * int r K(r) dr``, ``kappa2 = pi * int r**3 K(r) dr``
    (the ``cos**2`` angular factor integrates to ``pi``) and
    ``nu0 = 2*pi * int r K(r)**2 dr``.
    """

    def radial(f):
        val, err = integrate.quad(f, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13)
        if not np.isfinite(val) or err > 1e-10:
            raise NumericalError("kernel moment quadrature did not converge (error estimate %.3g)" % err)
        return val

    prof = lambda r: float(kernel.profile(r))
    kappa0 = 2.0 * np.pi * radial(lambda r: r * prof(r))
    kappa2 = np.pi * radial(lambda r: r ** 3 * prof(r))
    nu0 = 2.0 * np.pi * radial(lambda r: r * prof(r) ** 2)
    return KernelMoments(kappa0, kappa2, nu0)


def default_bandwidth(n):
    """Sample-size rule ``1.5 * n**(-1/6) - 0.36`` used as the nearest-neighbour target."""
    if int(n) != n or n < 1:
        raise InputError("sample size must be a positive integer, got %r" % (n,))
    h = 1.5 * float(n) ** (-1.0 / 6.0) - 0.36
    if h <= 0:
        raise ConfigurationError(
            "default bandwidth rule is nonpositive for n = %d; supply an explicit bandwidth" % n
        )
    return h
