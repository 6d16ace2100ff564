"""Univariate stochastic kernels.

* :func:`random_stream` - seeded, splittable numpy generators.
* :func:`ars_sample` - exact adaptive rejection sampling (tangent upper hull,
  chord squeeze) for log-concave densities with known derivative.
* :func:`mh_sample` - random-walk Metropolis-Hastings, run on the log scale
  when the support is the positive half-line.
* :func:`find_mode` - golden-section / derivative bracketing for unimodal
  log-densities.

All functions are pure given the generator passed in.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import ConcavityViolation, InvalidInit, NonIntegrableEnvelope

CONCAVITY_TOL = 1e-8
ARS_OFFSETS = (-3.0, -1.5, -0.5, 0.5, 1.5, 3.0)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def random_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Generator for replicate ``stream_id`` under master ``seed``.

    Streams are derived through ``SeedSequence`` spawn keys, so distinct ids
    give non-overlapping PCG64 streams and equal ``(seed, stream_id)`` pairs
    reproduce the same draws.
    """
    ss = np.random.SeedSequence(int(seed) % 2**64, spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class LogConcaveTarget:
    """Unnormalised log-density ``h`` with derivative ``dh`` on ``(lower, upper)``."""

    h: Callable[[float], float]
    dh: Callable[[float], float]
    lower: float = -math.inf
    upper: float = math.inf


class PiecewiseHull:
    """Tangent upper hull and chord lower hull of a concave log-density.

    Anchors are kept sorted. ``upper`` is the minimum of the tangents,
    ``lower`` interpolates linearly between anchors and is ``-inf`` outside
    the anchor range.
    """

    def __init__(self, xs, hs, dhs, lower=-math.inf, upper=math.inf):
        order = sorted(range(len(xs)), key=xs.__getitem__)
        self.x = [float(xs[i]) for i in order]
        self.h = [float(hs[i]) for i in order]
        self.dh = [float(dhs[i]) for i in order]
        self.lo = lower
        self.hi = upper
        self._check_concave()
        self._build()

    def _check_concave(self):
        dh = self.dh
        for j in range(len(dh) - 1):
            if dh[j + 1] > dh[j] + CONCAVITY_TOL * (1.0 + abs(dh[j])):
                raise ConcavityViolation(
                    f"derivative increases between anchors {self.x[j]:.6g} and {self.x[j + 1]:.6g}"
                )

    def _build(self):
        x, h, dh = self.x, self.h, self.dh
        k = len(x)
        if self.lo == -math.inf and dh[0] <= 0:
            raise NonIntegrableEnvelope("leftmost anchor slope must be positive")
        if self.hi == math.inf and dh[-1] >= 0:
            raise NonIntegrableEnvelope("rightmost anchor slope must be negative")
        z = [self.lo]
        for j in range(k - 1):
            d = dh[j] - dh[j + 1]
            if d <= 1e-12 * (abs(dh[j]) + abs(dh[j + 1]) + 1e-300):
                zj = 0.5 * (x[j] + x[j + 1])
            else:
                zj = (h[j + 1] - h[j] - x[j + 1] * dh[j + 1] + x[j] * dh[j]) / d
                zj = min(max(zj, x[j]), x[j + 1])
            z.append(zj)
        z.append(self.hi)
        self.z = z
        # log of the area under exp(u) on each piece, relative to the hull peak
        ua = [h[j] + dh[j] * (z[j] - x[j]) if z[j] > -math.inf else -math.inf for j in range(k)]
        ub = [h[j] + dh[j] * (z[j + 1] - x[j]) if z[j + 1] < math.inf else -math.inf for j in range(k)]
        top = max(max(ua), max(ub))
        self._top = top
        areas = []
        for j in range(k):
            s = dh[j]
            width = z[j + 1] - z[j]
            if width < math.inf and abs(s) * width < 1e-10:
                areas.append(math.exp(ua[j] - top) * width)
            elif s > 0:
                # exp(ub) (1 - exp(-s width)) / s
                areas.append(math.exp(ub[j] - top) * -math.expm1(-s * width) / s)
            else:
                areas.append(math.exp(ua[j] - top) * -math.expm1(s * width) / -s)
        cum = []
        acc = 0.0
        for a in areas:
            acc += a
            cum.append(acc)
        self._cum = cum

    def upper(self, r: float) -> float:
        j = bisect.bisect_right(self.z, r, 1, len(self.z) - 1) - 1
        return self.h[j] + self.dh[j] * (r - self.x[j])

    def lower(self, r: float) -> float:
        x = self.x
        if r < x[0] or r > x[-1]:
            return -math.inf
        j = bisect.bisect_right(x, r) - 1
        if j >= len(x) - 1:
            return self.h[-1]
        t = (r - x[j]) / (x[j + 1] - x[j])
        return (1.0 - t) * self.h[j] + t * self.h[j + 1]

    def envelope_mass(self) -> float:
        """Total mass of ``exp(upper)`` (absolute scale)."""
        return self._cum[-1] * math.exp(self._top)

    def sample(self, u1: float, u2: float) -> float:
        """Draw from the normalised ``exp(upper)`` using two uniforms."""
        cum = self._cum
        target = u1 * cum[-1]
        j = bisect.bisect_left(cum, target)
        if j >= len(cum):
            j = len(cum) - 1
        a, b = self.z[j], self.z[j + 1]
        s = self.dh[j]
        width = b - a
        if width < math.inf and abs(s) * width < 1e-10:
            return a + u2 * width
        if s > 0:
            return b + math.log1p(-u2 * -math.expm1(-s * width)) / s
        return a + math.log1p(-u2 * -math.expm1(s * width)) / s

    def insert(self, x: float, h: float, dh: float):
        j = bisect.bisect_left(self.x, x)
        if j < len(self.x) and self.x[j] == x:
            return
        self.x.insert(j, x)
        self.h.insert(j, h)
        self.dh.insert(j, dh)
        self._check_concave()
        self._build()


def _expand_anchors(target: LogConcaveTarget, xs: list[float]):
    """Add anchors outward until the outer slopes have the right signs."""
    hs = [target.h(x) for x in xs]
    dhs = [target.dh(x) for x in xs]
    for side in (0, -1):
        unbounded = target.lower == -math.inf if side == 0 else target.upper == math.inf
        if not unbounded:
            continue
        step = max(1.0, xs[-1] - xs[0])
        for _ in range(60):
            idx = 0 if side == 0 else len(xs) - 1
            if (side == 0 and dhs[idx] > 0) or (side == -1 and dhs[idx] < 0):
                break
            xn = xs[idx] - step if side == 0 else xs[idx] + step
            hn, dn = target.h(xn), target.dh(xn)
            if not (math.isfinite(hn) and math.isfinite(dn)):
                break
            if side == 0:
                xs.insert(0, xn), hs.insert(0, hn), dhs.insert(0, dn)
            else:
                xs.append(xn), hs.append(hn), dhs.append(dn)
            step *= 2.0
    return xs, hs, dhs


def ars_sample(
    target: LogConcaveTarget,
    anchors: Sequence[float],
    rng: np.random.Generator,
    *,
    max_iter: int = 10_000,
    return_hull: bool = False,
):
    """One exact draw from the density proportional to ``exp(target.h)``.

    Each proposal goes through the squeeze test, then the full test; a
    rejected proposal becomes a new anchor. With ``return_hull`` the final
    hull and the number of proposals are returned alongside the draw.
    """
    xs = sorted(float(a) for a in anchors)
    if len(xs) < 2:
        raise NonIntegrableEnvelope("at least two anchors are required")
    if xs[0] <= target.lower or xs[-1] >= target.upper:
        raise NonIntegrableEnvelope("anchors must lie inside the support")
    xs, hs, dhs = _expand_anchors(target, xs)
    hull = PiecewiseHull(xs, hs, dhs, target.lower, target.upper)
    for it in range(1, max_iter + 1):
        u1, u2, u3 = rng.random(3).tolist()
        r = hull.sample(u1, u2)
        u_r = hull.upper(r)
        log_w = math.log(u3) if u3 > 0 else -math.inf
        if log_w <= hull.lower(r) - u_r:
            return (r, hull, it) if return_hull else r
        h_r = target.h(r)
        if log_w <= h_r - u_r:
            return (r, hull, it) if return_hull else r
        hull.insert(r, h_r, target.dh(r))
    raise NonIntegrableEnvelope(f"no acceptance after {max_iter} proposals")


def ars_anchors(mode: float, curvature: float, offsets=ARS_OFFSETS) -> list[float]:
    """Anchors at ``mode + offsets * scale`` with scale from ``h''`` at the mode."""
    scale = 1.0 / math.sqrt(-curvature) if curvature < 0 else 1.0
    return [mode + o * scale for o in offsets]


@dataclass(frozen=True)
class MHConfig:
    sigma: float = 1.0
    iterations: int = 100
    init: float | str = "auto-mode"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("proposal sigma must be positive")
        if int(self.iterations) < 1:
            raise ValueError("iterations must be >= 1")
        if isinstance(self.init, str) and self.init != "auto-mode":
            raise ValueError("init must be a number or 'auto-mode'")


def mh_sample(
    logpdf: Callable[[float], float],
    config: MHConfig,
    rng: np.random.Generator,
    *,
    support: tuple[float, float] = (-math.inf, math.inf),
    bracket: tuple[float, float] | None = None,
) -> float:
    """Final state of a symmetric random-walk MH chain.

    On ``support == (0, inf)`` the walk is ``log R' ~ N(log R, sigma^2)`` and
    the log-Jacobian ``log r`` enters the acceptance ratio. ``bracket`` is
    needed for ``init='auto-mode'`` and is given on the natural scale.
    """
    lo, hi = support
    on_log = lo == 0.0 and hi == math.inf
    if on_log:
        def f(t):
            return logpdf(math.exp(t)) + t
    elif lo == -math.inf and hi == math.inf:
        f = logpdf
    else:
        def f(x):
            return logpdf(x) if lo < x < hi else -math.inf

    if isinstance(config.init, str):
        if bracket is None:
            raise InvalidInit("auto-mode initialisation needs a bracket")
        a, b = bracket
        if on_log:
            a, b = math.log(a), math.log(b)
        x = find_mode(f, (a, b), grid=32).x
    else:
        x = math.log(config.init) if on_log else float(config.init)
    fx = f(x)
    if not fx > -math.inf:
        raise InvalidInit(f"log-density is -inf at the initial state {x}")
    x = _mh_chain(f, x, fx, config.sigma, int(config.iterations), rng)
    return math.exp(x) if on_log else x


def _mh_chain(f, x, fx, sigma, n, rng):
    steps = (rng.standard_normal(n) * sigma).tolist()
    logu = np.log(rng.random(n)).tolist()
    for i in range(n):
        y = x + steps[i]
        fy = f(y)
        if logu[i] < fy - fx:
            x, fx = y, fy
    return x


class ModeResult(NamedTuple):
    x: float
    at_endpoint: bool


def find_mode(
    logpdf: Callable[[float], float],
    bracket: tuple[float, float],
    *,
    dlogpdf: Callable[[float], float] | None = None,
    grid: int = 0,
    tol: float = 1e-8,
) -> ModeResult:
    """Maximiser of a unimodal log-density on ``bracket``.

    With ``dlogpdf`` the root of the derivative is bracketed (Brent);
    otherwise golden-section search is used until the bracket is narrower
    than ``tol``. ``grid > 0`` first scans that many points and narrows the
    bracket to the neighbours of the best one, which guards against
    integrable spikes. A maximum at a bracket end is returned with
    ``at_endpoint=True``.
    """
    a, b = float(bracket[0]), float(bracket[1])
    if not a < b:
        raise ValueError("bracket must satisfy a < b")
    lo0, hi0 = a, b
    if grid > 0:
        pts = np.linspace(a, b, grid + 1).tolist()
        vals = [logpdf(p) for p in pts]
        i = max(range(len(pts)), key=vals.__getitem__)
        a = pts[max(i - 1, 0)]
        b = pts[min(i + 1, len(pts) - 1)]
    if dlogpdf is not None:
        da, db = dlogpdf(a), dlogpdf(b)
        if da <= 0:
            return ModeResult(a, a == lo0)
        if db >= 0:
            return ModeResult(b, b == hi0)
        x = brentq(dlogpdf, a, b, xtol=tol * 1e-2, rtol=4 * np.finfo(float).eps)
        return ModeResult(x, False)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = logpdf(c), logpdf(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = logpdf(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = logpdf(d)
    x = 0.5 * (a + b)
    fx = logpdf(x)
    for end in (lo0, hi0):
        if abs(x - end) <= 2 * tol and logpdf(end) >= fx:
            return ModeResult(end, True)
    return ModeResult(x, False)
