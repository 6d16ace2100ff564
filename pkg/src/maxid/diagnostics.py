"""Extremal coefficients, marginal KL divergences and method comparisons.

The bivariate extremal coefficient at level ``z0`` is

    theta2(z0) = Lambda_{s1,s2}(z0, z0) / Lambda(z0),

the effective number of independent sites at that level: ``G2(z0, z0) =
G0(z0) ** theta2``. The numerator is a one-dimensional integral over the
magnitude of the probability that a Gaussian pair exceeds the scaled or
shifted threshold; both integrals are taken with the same quadrature.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr
from statsmodels.nonparametric.kde import KDEUnivariate

from .engine import ModelSpec, simulate_batch
from .errors import DegenerateLevel, DomainError
from .gaussian_fields import as_coords, bivariate_exceedance
from .marginal import log_quad, marginal_law

THETA_RTOL = 1e-8
QUANTILE_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


# --------------------------------------------------------------------------
# theoretical coefficient


def _mixture_integral(measure, z: float, log_prob, rtol: float) -> float:
    """``int P(threshold a(r) exceeded) mu(dr)`` with ``log_prob(a, r)``."""
    li = measure.log_intensity
    if measure.kind == "scale":

        def g(t):
            r = math.exp(t)
            return log_prob(z / r, r) + li(r) + t

        return log_quad(g, -10.0, 10.0, rtol=rtol)

    def g(r):
        return log_prob(z - r, r) + li(r)

    return log_quad(g, z - 12.0, z + 12.0, points=(0.0,), rtol=rtol)


def _log_marginal_exceed(a, r):
    return float(log_ndtr(-a))


def _pair_log_exceed(rho_of):
    def log_prob(a, r):
        v = bivariate_exceedance(a, a, min(rho_of(r), 1.0))
        return math.log(v) if v > 0 else -math.inf

    return log_prob


def theoretical_theta2(spec: ModelSpec, s1, s2, z0: float, rtol: float = THETA_RTOL) -> float:
    """Bivariate extremal coefficient of the sites ``s1, s2`` at level ``z0``."""
    law = marginal_law(spec.measure)
    if not z0 > law.lower_endpoint:
        raise DomainError(f"level {z0} is not above the lower endpoint {law.lower_endpoint}")
    rho_of = spec.correlation.pair_function(s1, s2)
    num = _mixture_integral(spec.measure, z0, _pair_log_exceed(rho_of), rtol)
    den = _mixture_integral(spec.measure, z0, _log_marginal_exceed, rtol)
    return num / den


@dataclass
class ExtremalCoefficientCurve:
    levels: np.ndarray
    values: np.ndarray
    sites: tuple
    probabilities: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.sites)
        if np.any(self.values < 1.0 - 1e-6) or np.any(self.values > n + 1e-6):
            raise DomainError(f"extremal coefficients must lie in [1, {n}]")

    @property
    def spread(self) -> float:
        return float(np.max(self.values) - np.min(self.values))


def theoretical_curve(spec: ModelSpec, s1, s2, probabilities=QUANTILE_LEVELS, rtol: float = THETA_RTOL):
    """``theta2`` at the marginal quantiles ``probabilities``."""
    law = marginal_law(spec.measure)
    probs = np.asarray(probabilities, dtype=float)
    levels = np.array([law.quantile(p) for p in probs])
    values = np.array([theoretical_theta2(spec, s1, s2, z, rtol) for z in levels])
    return ExtremalCoefficientCurve(levels, values, (tuple(np.atleast_1d(s1)), tuple(np.atleast_1d(s2))), probs)


# --------------------------------------------------------------------------
# empirical coefficient


def empirical_theta(samples, columns, p: float) -> float:
    """Empirical ``theta`` of the sites ``columns`` at marginal quantile level ``p``.

    The level ``z0`` is the empirical ``p``-quantile of the selected columns
    pooled together; the denominator is the pooled fraction at or below it.
    """
    x = np.asarray(samples, dtype=float)[:, list(columns)]
    n = x.shape[0]
    if not 0.0 < p < 1.0:
        raise DomainError("quantile level must lie in (0, 1)")
    if n * min(p, 1.0 - p) < 20:
        raise DegenerateLevel(f"too few replicates ({n}) for quantile level {p}")
    z0 = np.quantile(x, p)
    below = x <= z0
    joint = below.all(axis=1).mean()
    marg = below.mean()
    if joint in (0.0, 1.0) or marg in (0.0, 1.0):
        raise DegenerateLevel(f"empirical fraction is degenerate at level {p}")
    return float(math.log(joint) / math.log(marg))


def empirical_theta2(samples, i: int, j: int, p: float) -> float:
    return empirical_theta(samples, (i, j), p)


# --------------------------------------------------------------------------
# marginal KL divergence


@dataclass
class KLReport:
    values: np.ndarray
    method: str
    n: int
    literal: np.ndarray | None = None

    def __post_init__(self):
        if self.n <= 0:
            raise DomainError("sample size must be positive")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("divergences must be finite")

    @property
    def median(self) -> float:
        return float(np.median(self.values))


def kl_marginal(samples, law, literal: bool = False):
    """Monte Carlo ``D(q || p) = mean log(q(Z_i) / p(Z_i))`` at one site.

    ``q`` is a Gaussian kernel density estimate (Silverman bandwidth) of the
    samples and ``p`` the exact marginal density. With ``literal=True`` the
    weighted sum ``sum_i p(Z_i) log(q(Z_i) / p(Z_i))`` is returned as well.
    """
    x = np.asarray(samples, dtype=float).ravel()
    kde = KDEUnivariate(x)
    kde.fit(kernel="gau", bw="silverman", fft=True)
    q = np.maximum(np.interp(x, kde.support, kde.density), 1e-300)
    p = np.maximum(law.density(x), 1e-300)
    lr = np.log(q) - np.log(p)
    d = float(lr.mean())
    if literal:
        return d, float(np.sum(p * lr))
    return d


def kl_report(samples, law, method: str) -> KLReport:
    """Per-site divergences for a replicate matrix."""
    x = np.asarray(samples, dtype=float)
    pairs = [kl_marginal(x[:, k], law, literal=True) for k in range(x.shape[1])]
    return KLReport(np.array([a for a, _ in pairs]), method, x.shape[0], np.array([b for _, b in pairs]))


# --------------------------------------------------------------------------
# cross-method comparison


@dataclass
class ComparisonReport:
    kl: dict
    theta: list
    timing: dict
    n: int
    sites: np.ndarray
    extras: dict = field(default_factory=dict)

    def kl_rows(self):
        for method, rep in self.kl.items():
            for k, (v, w) in enumerate(zip(rep.values, rep.literal)):
                yield {"method": method, "site": k + 1, "kl": v, "kl_literal": w}


def theta_table(spec: ModelSpec, sites, samples: dict, pairs=None, probabilities=QUANTILE_LEVELS):
    """Rows of theoretical and empirical ``theta2`` per method, pair and level."""
    coords = as_coords(sites)
    if pairs is None:
        pairs = list(itertools.combinations(range(len(coords)), 2))
    law = marginal_law(spec.measure)
    rows = []
    for i, j in pairs:
        for p in probabilities:
            theo = theoretical_theta2(spec, coords[i], coords[j], law.quantile(p))
            row = {"site_i": i + 1, "site_j": j + 1, "p": p, "theoretical": theo}
            for method, x in samples.items():
                row[method] = empirical_theta2(x, i, j, p)
            rows.append(row)
    return rows


def comparison_report(
    spec: ModelSpec,
    sites,
    methods=("exact-ars", "exact-mh", "naive:100"),
    n: int = 100_000,
    seed: int = 0,
    workers: int = 1,
    pairs=None,
    samples: dict | None = None,
) -> ComparisonReport:
    """KL per site, ``theta2`` per pair and level, and timing for each method.

    All methods share the same seed. Pre-computed replicate matrices can be
    passed in ``samples`` (keyed by method) to skip the simulation.
    """
    coords = as_coords(sites)
    law = marginal_law(spec.measure)
    data, timing = {}, {}
    for method in methods:
        if samples is not None and method in samples:
            data[method] = np.asarray(samples[method])
            timing[method] = math.nan
            continue
        batch = simulate_batch(spec, coords, n, seed, method=method, workers=workers)
        data[method] = batch.values
        timing[method] = float(batch.times.mean())
    counts = {m: x.shape[0] for m, x in data.items()}
    kl = {m: kl_report(x, law, m) for m, x in data.items()}
    theta = theta_table(spec, coords, data, pairs)
    return ComparisonReport(kl, theta, timing, min(counts.values()), coords)
