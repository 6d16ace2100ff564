"""Univariate marginal law of the max-id process at a single site.

With ``W(s0)`` standard normal the exponent function ``Lambda(z)`` depends
only on the magnitude measure. After integrating by parts,

* scale mixture:    ``Lambda(z) = int_0^inf m(z/u) phi(u) du`` for ``z > 0``
  (``Lambda = inf`` for ``z <= 0``, so the lower endpoint is 0);
* location mixture: ``Lambda(z) = int m(z - w) phi(w) dw``.

``lambda(z) = -dLambda/dz`` is the matching intensity integral. Both are
tabulated once on a grid geometric in ``Lambda`` and interpolated with cubic
Hermite splines of ``log Lambda`` using the exact derivatives, which makes
``level(E) = Lambda^{-1}(E)`` cheap enough for the simulation inner loop.
"""

from __future__ import annotations

import bisect
import functools
import math
import warnings

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq
from scipy.special import log_ndtr

from .errors import QuadratureFailure, TabulationRangeExceeded
from .measures import LocationMagnitudeMeasure, ScaleMagnitudeMeasure

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
QUAD_RTOL = 1e-9


def log_quad(g, lo: float, hi: float, points=(), rtol: float = QUAD_RTOL, npts: int = 64) -> float:
    """``int exp(g(x)) dx`` over the effective support of a unimodal-ish ``g``.

    A coarse scan locates the peak and pushes ``[lo, hi]`` outward until
    the integrand has dropped by ``exp(-45)`` at both ends; the integral is
    then taken by adaptive Gauss-Kronrod with the peak and ``points`` as
    breakpoints.
    """
    for _ in range(40):
        xs = np.linspace(lo, hi, npts + 1).tolist()
        vals = [g(x) for x in xs]
        finite = [v for v in vals if v < math.inf and v == v]
        top = max(finite) if finite else -math.inf
        if top == -math.inf:
            return 0.0
        width = hi - lo
        moved = False
        if vals[0] > top - 45.0:
            lo -= width
            moved = True
        if vals[-1] > top - 45.0:
            hi += width
            moved = True
        if not moved:
            break
    else:
        raise QuadratureFailure(f"integrand does not decay on [{lo:.4g}, {hi:.4g}]")
    keep = [i for i, v in enumerate(vals) if v > top - 45.0]
    i0, i1 = max(keep[0] - 1, 0), min(keep[-1] + 1, len(xs) - 1)
    a, b = xs[i0], xs[i1]
    peak = xs[max(range(len(vals)), key=lambda i: vals[i] if vals[i] < math.inf else -math.inf)]
    brk = sorted({p for p in (peak, *points) if a < p < b})

    def f(x):
        v = g(x) - top
        return math.exp(min(v, 700.0)) if v > -745.0 else 0.0

    # the error estimate is checked below, so quad's own warnings are redundant
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        val, err = quad(f, a, b, points=brk or None, epsabs=0.0, epsrel=rtol * 1e-2, limit=400)
        if not (val > 0 and err <= rtol * val):
            val2, err2 = quad(f, a, b, points=brk or None, epsabs=0.0, epsrel=rtol, limit=2000)
            if not (val2 > 0 and err2 <= rtol * val2):
                raise QuadratureFailure(
                    f"quadrature tolerance not met on [{a:.6g}, {b:.6g}]: value {val2:.6g}, error {err2:.3g}"
                )
            val = val2
    return val * math.exp(top)


# --------------------------------------------------------------------------
# exponent function and intensity by quadrature


def exponent_quad(measure, z: float) -> float:
    """``Lambda(z)`` by quadrature (integrated-by-parts form)."""
    if measure.kind == "scale":
        if z <= 0:
            return math.inf
        lt = measure.log_tail

        # u = exp(s): int m(z e^{-s}) phi(e^s) e^s ds
        def g(s):
            return lt(z * math.exp(-s)) - 0.5 * math.exp(2.0 * s) + s - _LOG_SQRT_2PI

        return log_quad(g, -12.0, 4.0)
    lt = measure.log_tail

    def g(w):
        return lt(z - w) - 0.5 * w * w - _LOG_SQRT_2PI

    return log_quad(g, -12.0, 12.0, points=(z,))


def intensity_quad(measure, z: float) -> float:
    """``lambda(z) = -dLambda/dz`` by quadrature."""
    li = measure.log_intensity
    if measure.kind == "scale":
        if z <= 0:
            return math.inf

        def g(s):
            return li(z * math.exp(-s)) - 0.5 * math.exp(2.0 * s) - _LOG_SQRT_2PI

        return log_quad(g, -12.0, 4.0)

    def g(w):
        if w == z:
            return li(0.0)
        return li(z - w) - 0.5 * w * w - _LOG_SQRT_2PI

    return log_quad(g, -12.0, 12.0, points=(z,))


def exponent_quad_direct(measure, z: float) -> float:
    """``Lambda(z) = int (1 - Phi(a(r))) f(r) dr`` without integrating by parts.

    ``a(r) = z / r`` (scale) or ``z - r`` (location). Slower than
    :func:`exponent_quad`; kept as an independent check.
    """
    li = measure.log_intensity
    if measure.kind == "scale":
        def g(t):
            r = math.exp(t)
            return float(log_ndtr(-z / r)) + li(r) + t

        return log_quad(g, -10.0, 10.0)

    def g(r):
        if r == 0.0:
            return float(log_ndtr(r - z)) + li(0.0)
        return float(log_ndtr(r - z)) + li(r)

    return log_quad(g, z - 12.0, z + 12.0, points=(0.0,))


# --------------------------------------------------------------------------
# tabulated law


class MarginalLaw:
    """Tabulated exponent function, distribution function, density and quantile."""

    def __init__(self, measure, n_grid: int = 2048, lam_min: float = 1e-12, lam_max: float = 50.0):
        self.measure = measure
        self.scale = measure.kind == "scale"
        self.lower_endpoint = 0.0 if self.scale else -math.inf
        self.lam_min = lam_min
        self.lam_max = lam_max
        self._build(n_grid)

    # variable used for tabulation: x = log z (scale) or z (location)
    def _to_x(self, z):
        return math.log(z) if self.scale else z

    def _to_z(self, x):
        return math.exp(x) if self.scale else x

    def _log_lam_x(self, x):
        lam = exponent_quad(self.measure, self._to_z(x))
        # far in the upper tail Lambda underflows; a finite floor keeps root brackets usable
        return math.log(max(lam, 1e-320))

    def _root_x(self, log_target: float, x0: float) -> float:
        f = lambda x: self._log_lam_x(x) - log_target  # noqa: E731
        a = b = x0
        fa = fb = f(x0)
        step = 1.0
        while fa < 0:
            a -= step
            fa = f(a)
            step *= 2
        step = 1.0
        while fb > 0:
            b += step
            fb = f(b)
            step *= 2
        if a == b:
            return a
        return brentq(f, a, b, xtol=1e-14, rtol=1e-14)

    def _build(self, n_grid):
        ylo, yhi = math.log(self.lam_min), math.log(self.lam_max)
        x_lo = self._root_x(yhi, 0.0)
        x_hi = self._root_x(ylo, x_lo + 1.0)
        coarse = np.linspace(x_lo, x_hi, 129)
        cy = np.array([self._log_lam_x(x) for x in coarse])
        # x as a monotone function of log Lambda (increasing order for PCHIP)
        inv = PchipInterpolator(cy[::-1], coarse[::-1])
        targets = np.linspace(yhi, ylo, n_grid)
        xs = inv(targets)
        xs[0], xs[-1] = x_lo, x_hi
        xs = np.maximum.accumulate(xs)
        ys, ms = [], []
        for x in xs:
            z = self._to_z(x)
            lam = exponent_quad(self.measure, z)
            dens = intensity_quad(self.measure, z)
            ys.append(math.log(lam))
            # d log Lambda / dx = -lambda / Lambda * dz/dx
            ms.append(-dens / lam * (z if self.scale else 1.0))
        self.x = [float(v) for v in xs]
        self.y = ys
        self.m = ms
        self._neg_y = [-v for v in ys]
        self._xa, self._ya, self._ma = np.array(self.x), np.array(ys), np.array(ms)

    # -- interpolation helpers

    def _interval(self, x):
        j = bisect.bisect_right(self.x, x) - 1
        return min(max(j, 0), len(self.x) - 2)

    def _hermite(self, j, x):
        x0, x1 = self.x[j], self.x[j + 1]
        h = x1 - x0
        t = (x - x0) / h
        t2, t3 = t * t, t * t * t
        y0, y1, m0, m1 = self.y[j], self.y[j + 1], self.m[j], self.m[j + 1]
        y = (2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * h * m0 + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * h * m1
        dy = ((6 * t2 - 6 * t) * y0 + (3 * t2 - 4 * t + 1) * h * m0 + (-6 * t2 + 6 * t) * y1 + (3 * t2 - 2 * t) * h * m1) / h
        return y, dy

    def _in_table(self, x):
        return self.x[0] <= x <= self.x[-1]

    # -- public API

    def exponent_at(self, z: float, fresh: bool = False) -> float:
        """``Lambda(z)``; from the table unless ``fresh`` or outside its range."""
        if z <= self.lower_endpoint:
            return math.inf
        x = self._to_x(z)
        if fresh or not self._in_table(x):
            return exponent_quad(self.measure, z)
        return math.exp(self._hermite(self._interval(x), x)[0])

    def _hermite_array(self, z):
        """``(log Lambda, d log Lambda / dx, inside)`` at an array of points."""
        z = np.asarray(z, dtype=float)
        valid = z > self.lower_endpoint
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.log(np.where(valid, z, 1.0)) if self.scale else z
        xa, ya, ma = self._xa, self._ya, self._ma
        inside = valid & (x >= xa[0]) & (x <= xa[-1])
        j = np.clip(np.searchsorted(xa, x, side="right") - 1, 0, len(xa) - 2)
        x0, h = xa[j], xa[j + 1] - xa[j]
        t = np.clip((x - x0) / h, 0.0, 1.0)
        t2, t3 = t * t, t * t * t
        y0, y1, m0, m1 = ya[j], ya[j + 1], ma[j], ma[j + 1]
        y = (2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * h * m0 + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * h * m1
        dy = ((6 * t2 - 6 * t) * y0 + (3 * t2 - 4 * t + 1) * h * m0 + (-6 * t2 + 6 * t) * y1 + (3 * t2 - 2 * t) * h * m1) / h
        return y, dy, valid, inside

    def cdf(self, z):
        """``G0(z) = exp(-Lambda(z))``; accepts scalars or arrays."""
        if np.ndim(z) == 0:
            lam = self.exponent_at(float(z))
            return math.exp(-lam) if lam < math.inf else 0.0
        z = np.asarray(z, dtype=float)
        y, _, valid, inside = self._hermite_array(z)
        out = np.where(inside, np.exp(-np.exp(y)), 0.0)
        for i in np.flatnonzero(valid & ~inside):
            out.flat[i] = self.cdf(float(z.flat[i]))
        return out

    def density(self, z):
        """``g0(z) = lambda(z) G0(z)``; accepts scalars or arrays."""
        if np.ndim(z) > 0:
            z = np.asarray(z, dtype=float)
            y, dy, valid, inside = self._hermite_array(z)
            lam = np.exp(y)
            jac = np.where(inside, z, 1.0) if self.scale else 1.0
            out = np.where(inside, np.exp(-lam) * (-lam * dy / jac), 0.0)
            for i in np.flatnonzero(valid & ~inside):
                out.flat[i] = self.density(float(z.flat[i]))
            return out
        if z <= self.lower_endpoint:
            return 0.0
        x = self._to_x(z)
        if not self._in_table(x):
            lam = exponent_quad(self.measure, z)
            return math.exp(-lam) * intensity_quad(self.measure, z)
        y, dy = self._hermite(self._interval(x), x)
        lam = math.exp(y)
        intensity = -lam * dy / (z if self.scale else 1.0)
        return math.exp(-lam) * intensity

    def level(self, e: float) -> float:
        """The ``z`` with ``Lambda(z) = e`` (so ``G0(z) = exp(-e)``)."""
        if not e > 0:
            raise ValueError("exponent level must be positive")
        target = math.log(e)
        if not (self.y[-1] <= target <= self.y[0]):
            x = self._root_x(target, self.x[0] if target > self.y[0] else self.x[-1])
            return self._to_z(x)
        # y decreases along the table
        j = bisect.bisect_left(self._neg_y, -target) - 1
        j = min(max(j, 0), len(self.x) - 2)
        x0, x1 = self.x[j], self.x[j + 1]
        y0, y1 = self.y[j], self.y[j + 1]
        x = x0 + (target - y0) / (y1 - y0) * (x1 - x0) if y1 != y0 else x0
        for _ in range(8):
            y, dy = self._hermite(j, x)
            step = (y - target) / dy
            x = min(max(x - step, x0), x1)
            if abs(y - target) < 1e-13:
                break
        return self._to_z(x)

    def quantile(self, p: float) -> float:
        if not 0.0 < p < 1.0:
            raise ValueError("probability must lie in (0, 1)")
        e = -math.log(p)
        # small slack: exp / log round trips at the table ends land just outside
        if not (self.lam_min * (1 - 1e-6) <= e <= self.lam_max * (1 + 1e-6)):
            raise TabulationRangeExceeded(f"p={p!r} lies outside the tabulated range")
        return self.level(e)

    def next_level(self, e: float, rng) -> tuple[float, float]:
        e_new = e + rng.exponential()
        return e_new, self.level(e_new)

    def table(self) -> np.ndarray:
        """``(z, Lambda(z), lambda(z))`` at the table nodes."""
        z = np.array([self._to_z(x) for x in self.x])
        lam = np.exp(self.y)
        dens = -lam * np.array(self.m) / (z if self.scale else 1.0)
        return np.column_stack([z, lam, dens])


@functools.lru_cache(maxsize=16)
def marginal_law(measure: ScaleMagnitudeMeasure | LocationMagnitudeMeasure) -> MarginalLaw:
    """Cached :class:`MarginalLaw` for a (hashable) measure."""
    return MarginalLaw(measure)
