"""Compiled inner loop of the exact simulator.

These functions mirror the reference Python path in :mod:`maxid.engine`
(scale-mixture ARS, Metropolis-Hastings for both mixtures, Hermite level
inversion, conditional Gaussian profiles) and consume the generator in the
same order, so both backends produce the same replicates up to floating
point rounding. Failures are reported through a status code and the caller
reruns the replicate on the Python path.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

OK = 0
LEVEL_OUT_OF_TABLE = 1
ARS_FAILED = 2
LEVEL_CAP_HIT = 3

MAX_ANCHORS = 96
LOG_CORRELATION_FLOOR = -300.0
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_CONCAVITY_TOL = 1e-8


# --------------------------------------------------------------------------
# conditional magnitude targets


@njit(cache=True)
def _expm1_ratio(b, x):
    bx = b * x
    if abs(bx) < 1e-5:
        return x * (1.0 + bx / 2.0 + bx * bx / 6.0)
    return math.expm1(bx) / b


@njit(cache=True)
def scale_h(a, b, zz, t):
    q = -0.5 * zz * math.exp(-2.0 * t)
    if b == 0.0:
        return -(a + 1.0) * t + q
    return -t + math.log(b * math.exp(-b * t) + a) - a * _expm1_ratio(b, t) + q


@njit(cache=True)
def scale_dh(a, b, zz, t):
    q = zz * math.exp(-2.0 * t)
    if b == 0.0:
        return -(a + 1.0) + q
    e = b * math.exp(-b * t)
    return -1.0 - b * e / (e + a) - a * math.exp(b * t) + q


@njit(cache=True)
def scale_d2h(a, b, zz, t):
    q = -2.0 * zz * math.exp(-2.0 * t)
    if b == 0.0:
        return q
    e = b * math.exp(-b * t)
    return a * b * b * e / (e + a) ** 2 - a * b * math.exp(b * t) + q


@njit(cache=True)
def scale_mode(a, b, zz):
    x = 0.5 * math.log(zz / (a + 1.0))
    if b == 0.0:
        return x
    tol = 1e-10
    fx = scale_dh(a, b, zz, x)
    lo, hi = -math.inf, math.inf
    if fx > 0:
        lo = x
    else:
        hi = x
    for _ in range(100):
        if fx == 0.0:
            return x
        step = -fx / scale_d2h(a, b, zz, x)
        if abs(step) < tol:
            return x + step
        xn = x + step
        if not (lo < xn < hi):
            if lo > -math.inf and hi < math.inf:
                xn = 0.5 * (lo + hi)
            else:
                mag = abs(step) if math.isfinite(step) else 1.0
                xn = x + (1.0 if fx > 0 else -1.0) * max(1.0, mag)
        x = xn
        fx = scale_dh(a, b, zz, x)
        if fx > 0:
            lo = x
        else:
            hi = x
        if hi - lo < tol:
            return x
    return x


@njit(cache=True)
def location_log_intensity(a, b1, b2, r):
    if r > 0:
        return math.log(a * b1) + (b1 - 1.0) * math.log(r) - a * r**b1
    if r < 0:
        return math.log(a * b2) + (b2 - 1.0) * math.log(-r) + a * (-r) ** b2
    if b1 == 1.0:
        return math.log(a)
    return math.inf if b1 < 1.0 else -math.inf


@njit(cache=True)
def location_h(a, b1, b2, z, r):
    d = z - r
    return location_log_intensity(a, b1, b2, r) - 0.5 * d * d


@njit(cache=True)
def location_init(a, b1, b2, z):
    lo0, hi0 = z - 12.0, z + 12.0
    pts = np.linspace(lo0, hi0, 49)
    best = 0
    bv = location_h(a, b1, b2, z, pts[0])
    for i in range(1, 49):
        v = location_h(a, b1, b2, z, pts[i])
        if v > bv:
            best, bv = i, v
    lo = pts[max(best - 1, 0)]
    hi = pts[min(best + 1, 48)]
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc = location_h(a, b1, b2, z, c)
    fd = location_h(a, b1, b2, z, d)
    tol = 1e-8
    while hi - lo > tol:
        if fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = location_h(a, b1, b2, z, c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = location_h(a, b1, b2, z, d)
    x = 0.5 * (lo + hi)
    fx = location_h(a, b1, b2, z, x)
    if abs(x - lo0) <= 2 * tol and location_h(a, b1, b2, z, lo0) >= fx:
        x = lo0
    elif abs(x - hi0) <= 2 * tol and location_h(a, b1, b2, z, hi0) >= fx:
        x = hi0
    if abs(x) > 0.05 and math.isfinite(location_h(a, b1, b2, z, x)):
        return x
    best = -1
    bv = -math.inf
    for i in range(49):
        if abs(pts[i]) > 0.05:
            v = location_h(a, b1, b2, z, pts[i])
            if best < 0 or v > bv:
                best, bv = i, v
    return pts[best]


# --------------------------------------------------------------------------
# samplers


@njit(cache=True)
def mh_chain(mix, a, b1, b2, z, x, sigma, n, rng):
    steps = rng.standard_normal(n) * sigma
    logu = np.log(rng.random(n))
    zz = z * z
    fx = scale_h(a, b1, zz, x) if mix == 0 else location_h(a, b1, b2, z, x)
    for i in range(n):
        y = x + steps[i]
        fy = scale_h(a, b1, zz, y) if mix == 0 else location_h(a, b1, b2, z, y)
        if logu[i] < fy - fx:
            x, fx = y, fy
    return x


@njit(cache=True)
def _hull_build(x, h, d, k, z, cum):
    """Fill breakpoints ``z`` and cumulative piece masses; False if not integrable."""
    if d[0] <= 0 or d[k - 1] >= 0:
        return False
    z[0] = -math.inf
    for j in range(k - 1):
        dd = d[j] - d[j + 1]
        if dd <= 1e-12 * (abs(d[j]) + abs(d[j + 1]) + 1e-300):
            zj = 0.5 * (x[j] + x[j + 1])
        else:
            zj = (h[j + 1] - h[j] - x[j + 1] * d[j + 1] + x[j] * d[j]) / dd
            zj = min(max(zj, x[j]), x[j + 1])
        z[j + 1] = zj
    z[k] = math.inf
    top = -math.inf
    for j in range(k):
        if z[j] > -math.inf:
            top = max(top, h[j] + d[j] * (z[j] - x[j]))
        if z[j + 1] < math.inf:
            top = max(top, h[j] + d[j] * (z[j + 1] - x[j]))
    acc = 0.0
    for j in range(k):
        s = d[j]
        width = z[j + 1] - z[j]
        ua = h[j] + d[j] * (z[j] - x[j]) if z[j] > -math.inf else -math.inf
        ub = h[j] + d[j] * (z[j + 1] - x[j]) if z[j + 1] < math.inf else -math.inf
        if width < math.inf and abs(s) * width < 1e-10:
            area = math.exp(ua - top) * width
        elif s > 0:
            area = math.exp(ub - top) * -math.expm1(-s * width) / s
        else:
            area = math.exp(ua - top) * -math.expm1(s * width) / -s
        acc += area
        cum[j] = acc
    return True


@njit(cache=True)
def _concave(d, k):
    for j in range(k - 1):
        if d[j + 1] > d[j] + _CONCAVITY_TOL * (1.0 + abs(d[j])):
            return False
    return True


@njit(cache=True)
def scale_ars(a, b, z, rng):
    """Draw ``log R`` given ``R W = z`` by ARS; returns ``(t, ok)``."""
    zz = z * z
    mode = scale_mode(a, b, zz)
    curv = scale_d2h(a, b, zz, mode)
    s = 1.0 / math.sqrt(-curv) if curv < 0 else 1.0
    x = np.empty(MAX_ANCHORS)
    h = np.empty(MAX_ANCHORS)
    d = np.empty(MAX_ANCHORS)
    zb = np.empty(MAX_ANCHORS + 1)
    cum = np.empty(MAX_ANCHORS)
    offsets = (-3.0, -1.5, -0.5, 0.5, 1.5, 3.0)
    k = 0
    for o in offsets:
        x[k] = mode + o * s
        h[k] = scale_h(a, b, zz, x[k])
        d[k] = scale_dh(a, b, zz, x[k])
        k += 1
    m = 0
    while d[0] <= 0 and m < 60 and k < MAX_ANCHORS:
        for j in range(k, 0, -1):
            x[j], h[j], d[j] = x[j - 1], h[j - 1], d[j - 1]
        x[0] = x[1] - s * 2.0**m
        h[0] = scale_h(a, b, zz, x[0])
        d[0] = scale_dh(a, b, zz, x[0])
        k += 1
        m += 1
    m = 0
    while d[k - 1] >= 0 and m < 60 and k < MAX_ANCHORS:
        x[k] = x[k - 1] + s * 2.0**m
        h[k] = scale_h(a, b, zz, x[k])
        d[k] = scale_dh(a, b, zz, x[k])
        k += 1
        m += 1
    if not _concave(d, k) or not _hull_build(x, h, d, k, zb, cum):
        return math.nan, False
    for _ in range(10_000):
        u1 = rng.random()
        u2 = rng.random()
        u3 = rng.random()
        # sample from exp(upper)
        target = u1 * cum[k - 1]
        j = 0
        while j < k - 1 and cum[j] < target:
            j += 1
        lo, hi = zb[j], zb[j + 1]
        sl = d[j]
        width = hi - lo
        if width < math.inf and abs(sl) * width < 1e-10:
            r = lo + u2 * width
        elif sl > 0:
            r = hi + math.log1p(-u2 * -math.expm1(-sl * width)) / sl
        else:
            r = lo + math.log1p(-u2 * -math.expm1(sl * width)) / sl
        # upper hull at r
        ju = 0
        while ju < k - 1 and zb[ju + 1] <= r:
            ju += 1
        u_r = h[ju] + d[ju] * (r - x[ju])
        # squeeze at r
        if r < x[0] or r > x[k - 1]:
            l_r = -math.inf
        else:
            jl = 0
            while jl < k - 1 and x[jl + 1] <= r:
                jl += 1
            if jl >= k - 1:
                l_r = h[k - 1]
            else:
                w = (r - x[jl]) / (x[jl + 1] - x[jl])
                l_r = (1.0 - w) * h[jl] + w * h[jl + 1]
        lw = math.log(u3) if u3 > 0 else -math.inf
        if lw <= l_r - u_r:
            return r, True
        h_r = scale_h(a, b, zz, r)
        if lw <= h_r - u_r:
            return r, True
        if k >= MAX_ANCHORS:
            continue
        pos = 0
        while pos < k and x[pos] < r:
            pos += 1
        if pos < k and x[pos] == r:
            continue
        for j2 in range(k, pos, -1):
            x[j2], h[j2], d[j2] = x[j2 - 1], h[j2 - 1], d[j2 - 1]
        x[pos] = r
        h[pos] = h_r
        d[pos] = scale_dh(a, b, zz, r)
        k += 1
        if not _concave(d, k) or not _hull_build(x, h, d, k, zb, cum):
            return math.nan, False
    return math.nan, False


# --------------------------------------------------------------------------
# marginal level inversion


@njit(cache=True)
def _hermite(lx, ly, lm, j, x):
    x0, x1 = lx[j], lx[j + 1]
    hh = x1 - x0
    t = (x - x0) / hh
    t2 = t * t
    t3 = t2 * t
    y0, y1, m0, m1 = ly[j], ly[j + 1], lm[j], lm[j + 1]
    y = (2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * hh * m0 + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * hh * m1
    dy = (
        (6 * t2 - 6 * t) * y0 + (3 * t2 - 4 * t + 1) * hh * m0 + (-6 * t2 + 6 * t) * y1 + (3 * t2 - 2 * t) * hh * m1
    ) / hh
    return y, dy


@njit(cache=True)
def level(e, lx, ly, lm, neg_y, log_scale):
    """``z`` with ``Lambda(z) = e`` from the Hermite table; NaN outside it."""
    target = math.log(e)
    n = lx.shape[0]
    if not (ly[n - 1] <= target <= ly[0]):
        return math.nan
    j = np.searchsorted(neg_y, -target) - 1
    j = min(max(j, 0), n - 2)
    x0, x1 = lx[j], lx[j + 1]
    y0, y1 = ly[j], ly[j + 1]
    x = x0 + (target - y0) / (y1 - y0) * (x1 - x0) if y1 != y0 else x0
    for _ in range(8):
        y, dy = _hermite(lx, ly, lm, j, x)
        step = (y - target) / dy
        x = min(max(x - step, x0), x1)
        if abs(y - target) < 1e-13:
            break
    return math.exp(x) if log_scale else x


# --------------------------------------------------------------------------
# replicate


@njit(cache=True)
def _profile(mix, a, b1, b2, use_ars, mh_sigma, mh_iter, mh_init, static, chol0, sigma0, sdist, pref, nu, anchor, z, rng, y):
    """Fill ``y`` with a conditional profile through ``(anchor, z)``; False if ARS failed."""
    n = y.shape[0]
    if mix == 0:
        if use_ars:
            t, ok = scale_ars(a, b1, z, rng)
            if not ok:
                return False
        else:
            x0 = scale_mode(a, b1, z * z) if math.isnan(mh_init) else math.log(mh_init)
            t = mh_chain(0, a, b1, b2, z, x0, mh_sigma, mh_iter, rng)
        r = math.exp(t)
        w0 = z / r
    else:
        x0 = location_init(a, b1, b2, z) if math.isnan(mh_init) else mh_init
        r = mh_chain(1, a, b1, b2, z, x0, mh_sigma, mh_iter, rng)
        w0 = z - r
    if static:
        sigma = sigma0
        chol = chol0
    else:
        scale = (1.0 + r) ** nu
        sigma = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                v = sdist[i, j] * scale
                sigma[i, j] = math.exp(v) * pref[i, j] if v >= LOG_CORRELATION_FLOOR else 0.0
        chol = np.linalg.cholesky(sigma)
    g = rng.standard_normal(n)
    w = chol @ g
    shift = w0 - w[anchor]
    for i in range(n):
        w[i] += sigma[i, anchor] * shift
    w[anchor] = w0
    if mix == 0:
        for i in range(n):
            y[i] = r * w[i]
    else:
        for i in range(n):
            y[i] = r + w[i]
    y[anchor] = z
    return True


@njit(cache=True)
def simulate_ordered(
    mix, a, b1, b2, use_ars, mh_sigma, mh_iter, mh_init,
    static, chol0, sigma0, sdist, pref, nu,
    lx, ly, lm, neg_y, log_scale, level_cap, rng,
):  # fmt: skip
    """One replicate on ordered sites; returns ``(values, profiles, levels, status)``."""
    n = sdist.shape[0]
    values = np.empty(n)
    y = np.empty(n)
    e = rng.exponential()
    z = level(e, lx, ly, lm, neg_y, log_scale)
    if math.isnan(z):
        return values, 0, 0, LEVEL_OUT_OF_TABLE
    if not _profile(mix, a, b1, b2, use_ars, mh_sigma, mh_iter, mh_init, static, chol0, sigma0, sdist, pref, nu, 0, z, rng, y):
        return values, 0, 0, ARS_FAILED
    values[:] = y
    profiles = 1
    levels = 1
    for s in range(1, n):
        e = rng.exponential()
        z = level(e, lx, ly, lm, neg_y, log_scale)
        if math.isnan(z):
            return values, profiles, levels, LEVEL_OUT_OF_TABLE
        levels += 1
        count = 0
        while z > values[s]:
            if not _profile(mix, a, b1, b2, use_ars, mh_sigma, mh_iter, mh_init, static, chol0, sigma0, sdist, pref, nu, s, z, rng, y):
                return values, profiles, levels, ARS_FAILED
            profiles += 1
            ok = True
            for i in range(s):
                if not y[i] < values[i]:
                    ok = False
                    break
            if ok:
                for i in range(n):
                    if y[i] > values[i]:
                        values[i] = y[i]
            e += rng.exponential()
            z = level(e, lx, ly, lm, neg_y, log_scale)
            if math.isnan(z):
                return values, profiles, levels, LEVEL_OUT_OF_TABLE
            levels += 1
            count += 1
            if count > level_cap:
                return values, profiles, levels, LEVEL_CAP_HIT
    return values, profiles, levels, OK
