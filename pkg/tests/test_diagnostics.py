import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import PAPER_S4
from maxid.diagnostics import (
    ExtremalCoefficientCurve,
    KLReport,
    comparison_report,
    empirical_theta,
    empirical_theta2,
    kl_marginal,
    theoretical_curve,
    theoretical_theta2,
)
from maxid.engine import ModelSpec
from maxid.errors import DegenerateLevel, DomainError
from maxid.gaussian_fields import CorrelationModel, correlation
from maxid.marginal import marginal_law
from maxid.measures import LocationMagnitudeMeasure, ScaleMagnitudeMeasure
from maxid.samplers import random_stream


def _extremal_t_spec(alpha, rate):
    return ModelSpec(ScaleMagnitudeMeasure(alpha, 0.0), CorrelationModel("exponential", rate=rate))


BR_SPEC = ModelSpec(LocationMagnitudeMeasure(1.0, 1.0, 1.0), CorrelationModel("exponential", rate=2.0), sampler="mh")


def test_theta_is_one_at_coincident_sites():
    for spec in (PAPER_S4, BR_SPEC):
        z = marginal_law(spec.measure).quantile(0.5)
        assert theoretical_theta2(spec, [0.3, 0.3], [0.3, 0.3], z) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("alpha", [1.0, 2.5])
@pytest.mark.parametrize("d", [0.1, 0.5, 2.0])
def test_extremal_t_closed_form(alpha, d):
    spec = _extremal_t_spec(alpha, 1.0)
    rho = math.exp(-d)
    expected = 2.0 * stats.t.cdf(math.sqrt((alpha + 1) * (1 - rho) / (1 + rho)), df=alpha + 1)
    for z in (0.5, 3.0):
        assert theoretical_theta2(spec, [0.0], [d], z) == pytest.approx(expected, abs=1e-7)


@pytest.mark.parametrize("d", [0.05, 0.3, 1.5])
def test_brown_resnick_closed_form(d):
    rho = math.exp(-2.0 * d)
    expected = 2.0 * stats.norm.cdf(math.sqrt(2.0 * (1.0 - rho)) / 2.0)
    for z in (-1.0, 0.5, 4.0):
        assert theoretical_theta2(BR_SPEC, [0.0], [d], z) == pytest.approx(expected, abs=1e-7)


def test_halved_tolerance_is_stable():
    law = marginal_law(PAPER_S4.measure)
    s1, s2 = [0.125, 0.125], [0.625, 0.5]
    for p in (0.05, 0.5, 0.95):
        z = law.quantile(p)
        a = theoretical_theta2(PAPER_S4, s1, s2, z)
        b = theoretical_theta2(PAPER_S4, s1, s2, z, rtol=0.5e-8)
        assert abs(a - b) < 1e-6


def test_theta_monotone_along_a_line():
    spec = ModelSpec(ScaleMagnitudeMeasure(5.0, 2.0), CorrelationModel("exponential", rate=3.0))
    z = marginal_law(spec.measure).quantile(0.5)
    vals = [theoretical_theta2(spec, [0.0, 0.0], [d, 0.0], z) for d in (0.02, 0.1, 0.3, 0.8, 2.0)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0.05, 0.95))
def test_theta_bounds_nonstationary(x1, y1, x2, y2, p):
    z = marginal_law(PAPER_S4.measure).quantile(p)
    theta = theoretical_theta2(PAPER_S4, [x1, y1], [x2, y2], z)
    assert 1.0 - 1e-8 <= theta <= 2.0 + 1e-8


def test_theta_rises_with_weakening_correlation_in_magnitude():
    # nu > 0: larger magnitudes decorrelate faster, so high levels look less dependent
    spec = ModelSpec(ScaleMagnitudeMeasure(5.0, 2.0), CorrelationModel("nonstationary", nu=3.0, surface="constant"))
    curve = theoretical_curve(spec, [0.3, 0.5], [0.5, 0.5])
    assert np.all(np.diff(curve.values) > 0)
    assert curve.spread > 0.01
    flat = theoretical_curve(_extremal_t_spec(1.0, 1.0), [0.0], [0.4])
    assert flat.spread < 1e-6


def test_theta_rejects_level_below_endpoint():
    with pytest.raises(DomainError):
        theoretical_theta2(PAPER_S4, [0.1, 0.1], [0.2, 0.2], 0.0)


def test_curve_validation():
    with pytest.raises(DomainError):
        ExtremalCoefficientCurve(np.array([1.0]), np.array([2.5]), ((0.0,), (1.0,)))


def test_empirical_theta_identical_columns():
    x = random_stream(1).gumbel(size=(5000, 1))
    xx = np.hstack([x, x])
    for p in (0.05, 0.5, 0.95):
        assert empirical_theta2(xx, 0, 1, p) == pytest.approx(1.0, abs=1e-12)


def test_empirical_theta_independent_columns():
    x = random_stream(2).gumbel(size=(1_000_000, 3))
    for p in (0.05, 0.5, 0.95):
        assert abs(empirical_theta2(x, 0, 1, p) - 2.0) < 0.05
    assert abs(empirical_theta(x, (0, 1, 2), 0.5) - 3.0) < 0.05


def test_empirical_theta_matches_theory_for_exchangeable_sample():
    # Gumbel bivariate logistic with dependence 0.5: theta = 2 ** 0.5 at every level
    n, a = 200_000, 0.5
    rng = random_stream(3)
    s = stats.levy_stable.rvs(a, 1.0, scale=math.cos(math.pi * a / 2) ** (1 / a), size=n, random_state=rng)
    e = rng.exponential(size=(n, 2))
    u = np.exp(-((e / s[:, None]) ** a))
    for p in (0.25, 0.5, 0.75):
        assert abs(empirical_theta2(u, 0, 1, p) - 2**a) < 0.02


def test_empirical_theta_degenerate_levels():
    x = random_stream(4).gumbel(size=(100, 2))
    with pytest.raises(DegenerateLevel):
        empirical_theta2(x, 0, 1, 0.05)
    with pytest.raises(DomainError):
        empirical_theta2(x, 0, 1, 1.0)
    const = np.ones((1000, 2))
    with pytest.raises(DegenerateLevel):
        empirical_theta2(const, 0, 1, 0.5)


@pytest.mark.parametrize("measure", [ScaleMagnitudeMeasure(5.0, 2.0), LocationMagnitudeMeasure(1.0, 1.5, 0.5)])
def test_kl_exact_sample_small(measure):
    law = marginal_law(measure)
    u = random_stream(5).random(100_000)
    x = np.array([law.quantile(p) for p in u])
    d = kl_marginal(x, law)
    assert abs(d) < 0.005
    shifted = kl_marginal(x + 0.3 * np.std(x), law)
    assert shifted > 10 * abs(d)


def test_kl_report_validation():
    with pytest.raises(DomainError):
        KLReport(np.array([0.1]), "exact-ars", 0)
    with pytest.raises(DomainError):
        KLReport(np.array([np.nan]), "exact-ars", 10)
    rep = KLReport(np.array([0.3, 0.1, 0.2]), "exact-ars", 10)
    assert rep.median == 0.2


def test_comparison_report_structure():
    sites = [[0.2, 0.3], [0.5, 0.5], [0.8, 0.4]]
    rep = comparison_report(PAPER_S4, sites, methods=("exact-ars", "naive:20"), n=400, seed=3)
    assert set(rep.kl) == {"exact-ars", "naive:20"}
    assert all(len(r.values) == 3 and r.n == 400 for r in rep.kl.values())
    assert rep.n == 400
    assert len(rep.theta) == 3 * 5
    row = rep.theta[0]
    assert {"site_i", "site_j", "p", "theoretical", "exact-ars", "naive:20"} <= set(row)
    assert len(list(rep.kl_rows())) == 6
    assert all(v > 0 for v in rep.timing.values())


def test_comparison_report_accepts_precomputed_samples():
    sites = [[0.2, 0.3], [0.5, 0.5]]
    x = random_stream(6).gumbel(size=(5000, 2))
    rep = comparison_report(BR_SPEC, sites, methods=("given",), samples={"given": x}, pairs=[(0, 1)])
    assert rep.kl["given"].n == 5000
    assert math.isnan(rep.timing["given"])


def test_pair_correlation_consistency():
    # the coefficient only sees the pair through its correlation function
    spec = _extremal_t_spec(1.0, 1.0)
    rho = correlation(spec.correlation, [0.0], [0.7])
    a = theoretical_theta2(spec, [0.0], [0.7], 1.0)
    b = theoretical_theta2(spec, [0.2], [0.9], 1.0)
    assert a == pytest.approx(b, abs=1e-10)
    assert rho == pytest.approx(math.exp(-0.7))
