"""Radon magnitude measures for the two Gaussian mixture families.

Each measure exposes its tail mass ``m(r) = measure([r, inf))``, the
intensity ``-dm/dr`` and the inverse of the tail mass. Array methods are
numpy-vectorised; the ``log_*`` scalar methods use :mod:`math` and are the
ones called from quadrature integrands and samplers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import lambertw

from .errors import ConfigError, DomainError


def _expm1_ratio(b, x):
    """``expm1(b x) / b``, accurate when ``b x`` is tiny or underflows."""
    bx = b * x
    if np.ndim(bx) == 0:
        if abs(bx) < 1e-5:
            return x * (1.0 + bx / 2.0 + bx * bx / 6.0)
        return math.expm1(bx) / b
    return np.where(np.abs(bx) < 1e-5, x * (1.0 + bx / 2.0 + bx * bx / 6.0), np.expm1(bx) / b)


@dataclass(frozen=True)
class ScaleMagnitudeMeasure:
    """Weibull-tailed measure on (0, inf): ``r**-beta * exp(-alpha (r**beta - 1) / beta)``.

    ``beta == 0`` is the max-stable boundary ``r**-alpha``.
    """

    alpha: float
    beta: float = 0.0

    kind = "scale"

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ConfigError(f"beta must be nonnegative, got {self.beta}")

    # scalar paths

    def log_tail(self, r: float) -> float:
        a, b = self.alpha, self.beta
        if b == 0.0:
            return -a * math.log(r)
        return -b * math.log(r) - a * _expm1_ratio(b, math.log(r))

    def log_intensity(self, r: float) -> float:
        a, b = self.alpha, self.beta
        lr = math.log(r)
        if b == 0.0:
            return math.log(a) - (a + 1.0) * lr
        # (b r^{-b-1} + a r^{-1}) exp(-a (r^b - 1) / b)
        return -lr + math.log(b * math.exp(-b * lr) + a) - a * _expm1_ratio(b, lr)

    # array paths

    def _check(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise DomainError("scale measure is supported on r > 0")
        return r

    def tail_mass(self, r):
        r = self._check(r)
        a, b = self.alpha, self.beta
        if b == 0.0:
            out = r ** (-a)
        else:
            out = r ** (-b) * np.exp(-a * _expm1_ratio(b, np.log(r)))
        return out if out.ndim else float(out)

    def intensity(self, r):
        r = self._check(r)
        a, b = self.alpha, self.beta
        if b == 0.0:
            out = a * r ** (-a - 1.0)
        else:
            out = (b * r ** (-b - 1.0) + a / r) * np.exp(-a * _expm1_ratio(b, np.log(r)))
        return out if out.ndim else float(out)

    def inverse_tail_mass(self, m):
        """Solve ``tail_mass(r) = m`` for ``m > 0`` (vectorised)."""
        m = np.asarray(m, dtype=float)
        if np.any(m <= 0):
            raise DomainError("tail mass must be positive")
        a, b = self.alpha, self.beta
        if b == 0.0:
            out = m ** (-1.0 / a)
            return out if out.ndim else float(out)
        # y = r**b solves y exp(a y / b) = exp(a / b) / m, i.e. a Lambert-W problem
        # with argument exp(L); large L starts from the asymptotic expansion.
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            c = a / b
            L = np.log(c) + c - np.log(m)
            safe = L < 700.0
            w = np.where(safe, lambertw(np.exp(np.where(safe, L, 0.0))).real, 0.0)
            w = np.where(safe, w, L - np.log(np.maximum(L, 1.0)))
            for _ in range(3):
                w = w - (w + np.log(w) - L) / (1.0 + 1.0 / w)
            t = np.log(w / c) / b  # log r
            # one Newton polish on log tail mass in log r
            lt = -b * t - a * _expm1_ratio(b, t)
            slope = -b - a * np.exp(b * t)
            t = t - (lt - np.log(m)) / slope
        # tiny beta loses the closed form (a / b overflows or cancels); solve those directly
        with np.errstate(invalid="ignore"):
            resid = np.abs(-b * t - a * _expm1_ratio(b, t) - np.log(m))
            bad = ~(resid <= 1e-12 * (1.0 + np.abs(np.log(m))))
        if np.any(bad):
            t = np.where(bad, 0.0, t)
            for i in np.flatnonzero(bad):
                t.flat[i] = self._solve_log_r(float(np.log(m.flat[i])))
        out = np.exp(t)
        return out if np.ndim(out) else float(out)

    def _solve_log_r(self, log_m: float) -> float:
        f = lambda t: self.log_tail(math.exp(t)) - log_m  # noqa: E731
        lo, hi = -1.0, 1.0
        while f(lo) < 0:
            lo *= 2.0
        while f(hi) > 0:
            hi *= 2.0
        return brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


@dataclass(frozen=True)
class LocationMagnitudeMeasure:
    """Measure on the real line with ``m(r) = exp(-alpha r**beta1)`` for ``r >= 0``
    and ``m(r) = exp(alpha |r|**beta2)`` for ``r < 0``.

    ``alpha = beta1 = beta2 = 1`` gives ``m(r) = exp(-r)`` (Brown-Resnick).
    """

    alpha: float
    beta1: float = 1.0
    beta2: float = 1.0

    kind = "location"

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not (self.beta1 > 0 and math.isfinite(self.beta1)):
            raise ConfigError(f"beta1 must be positive, got {self.beta1}")
        if not (0 < self.beta2 < 2):
            raise ConfigError(f"beta2 must lie in (0, 2), got {self.beta2}")

    def log_tail(self, r: float) -> float:
        if r >= 0:
            return -self.alpha * r ** self.beta1
        return self.alpha * (-r) ** self.beta2

    def log_intensity(self, r: float) -> float:
        a = self.alpha
        if r > 0:
            b = self.beta1
            return math.log(a * b) + (b - 1.0) * math.log(r) - a * r ** b
        if r < 0:
            b = self.beta2
            return math.log(a * b) + (b - 1.0) * math.log(-r) + a * (-r) ** b
        # at r = 0 the two one-sided limits may differ or diverge; use the right one
        b = self.beta1
        if b == 1.0:
            return math.log(a)
        return math.inf if b < 1.0 else -math.inf

    def tail_mass(self, r):
        r = np.asarray(r, dtype=float)
        a = self.alpha
        with np.errstate(over="ignore"):
            out = np.where(
                r >= 0,
                np.exp(-a * np.abs(r) ** self.beta1),
                np.exp(a * np.abs(r) ** self.beta2),
            )
        return out if out.ndim else float(out)

    def intensity(self, r):
        r = np.asarray(r, dtype=float)
        a, b1, b2 = self.alpha, self.beta1, self.beta2
        ar = np.abs(r)
        with np.errstate(divide="ignore"):
            pos = a * b1 * ar ** (b1 - 1.0) * np.exp(-a * ar ** b1)
            neg = a * b2 * ar ** (b2 - 1.0) * np.exp(a * ar ** b2)
        out = np.where(r >= 0, pos, neg)
        return out if out.ndim else float(out)

    def inverse_tail_mass(self, m):
        m = np.asarray(m, dtype=float)
        if np.any(m <= 0):
            raise DomainError("tail mass must be positive")
        lm = np.log(m)
        a = self.alpha
        out = np.where(
            lm <= 0,
            (np.maximum(-lm, 0.0) / a) ** (1.0 / self.beta1),
            -((np.maximum(lm, 0.0) / a) ** (1.0 / self.beta2)),
        )
        return out if out.ndim else float(out)
