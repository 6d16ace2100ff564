import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from maxid.errors import ConfigError, DomainError
from maxid.measures import LocationMagnitudeMeasure, ScaleMagnitudeMeasure

alphas = st.floats(0.2, 8.0)
betas = st.floats(0.0, 4.0)


def test_scale_unit_mass_at_one():
    for a, b in [(5, 2), (1, 0), (0.3, 1.7)]:
        assert ScaleMagnitudeMeasure(a, b).tail_mass(1.0) == pytest.approx(1.0, abs=1e-15)


def test_scale_small_beta_converges_to_power_law():
    vals = [ScaleMagnitudeMeasure(1.0, b).tail_mass(2.0) for b in (0.1, 0.01, 0.001)]
    errs = [abs(v - 0.5) for v in vals]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3


def test_location_exponential_reduction():
    m = LocationMagnitudeMeasure(1.0, 1.0, 1.0)
    for r in (1.7, -1.7):
        assert m.tail_mass(r) == pytest.approx(math.exp(-r), rel=1e-14)
    assert m.inverse_tail_mass(math.exp(2.0)) == pytest.approx(-2.0, abs=1e-14)


def test_power_law_intensity_and_inverse():
    m = ScaleMagnitudeMeasure(1.0, 0.0)
    assert m.intensity(2.0) == pytest.approx(0.25)
    assert m.inverse_tail_mass(4.0) == 0.25


@pytest.mark.parametrize(
    "measure",
    [ScaleMagnitudeMeasure(5.0, 2.0), LocationMagnitudeMeasure(1.0, 1.5, 0.5)],
    ids=["scale", "location"],
)
@pytest.mark.parametrize("r", [0.7, 3.1])
def test_intensity_matches_finite_difference(measure, r):
    h = 1e-5 * max(1.0, r)
    fd = (measure.tail_mass(r - h) - measure.tail_mass(r + h)) / (2 * h)
    assert measure.intensity(r) == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("r0", [0.1, 1.0, 10.0])
def test_scale_inverse_roundtrip(r0):
    m = ScaleMagnitudeMeasure(5.0, 2.0)
    assert m.inverse_tail_mass(m.tail_mass(r0)) == pytest.approx(r0, rel=1e-8)


def test_scale_inverse_relative_accuracy_over_decades():
    m = ScaleMagnitudeMeasure(5.0, 2.0)
    targets = np.logspace(-12, 12, 97)
    r = m.inverse_tail_mass(targets)
    assert np.all(np.abs(m.tail_mass(r) - targets) / targets < 1e-10)


def test_domain_and_parameter_errors():
    with pytest.raises(DomainError):
        ScaleMagnitudeMeasure(1.0, 1.0).tail_mass(0.0)
    with pytest.raises(DomainError):
        ScaleMagnitudeMeasure(1.0, 1.0).inverse_tail_mass(-1.0)
    with pytest.raises(ConfigError):
        ScaleMagnitudeMeasure(-1.0, 1.0)
    with pytest.raises(ConfigError):
        LocationMagnitudeMeasure(1.0, 1.0, 2.0)


def test_log_paths_agree_with_array_paths():
    s = ScaleMagnitudeMeasure(5.0, 2.0)
    loc = LocationMagnitudeMeasure(1.0, 1.5, 0.5)
    for r in (0.05, 0.9, 2.5):
        assert math.exp(s.log_tail(r)) == pytest.approx(s.tail_mass(r), rel=1e-12)
        assert math.exp(s.log_intensity(r)) == pytest.approx(s.intensity(r), rel=1e-12)
    for r in (-2.0, -0.3, 0.4, 1.9):
        assert math.exp(loc.log_tail(r)) == pytest.approx(loc.tail_mass(r), rel=1e-12)
        assert math.exp(loc.log_intensity(r)) == pytest.approx(loc.intensity(r), rel=1e-12)


def test_small_beta_matches_boundary():
    r = np.logspace(-1, 1, 41)
    near = ScaleMagnitudeMeasure(2.0, 0.001).tail_mass(r)
    edge = ScaleMagnitudeMeasure(2.0, 0.0).tail_mass(r)
    assert np.max(np.abs(near / edge - 1)) < 1e-2


@settings(max_examples=60, deadline=None)
@given(alphas, betas, st.floats(0.01, 20.0), st.floats(0.01, 20.0))
def test_scale_tail_strictly_decreasing(a, b, r1, r2):
    if abs(r1 - r2) < 1e-6:
        return
    lo, hi = min(r1, r2), max(r1, r2)
    m = ScaleMagnitudeMeasure(a, b)
    assert m.log_tail(lo) > m.log_tail(hi)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.3, 3.0), st.floats(0.1, 1.9), st.floats(-5, 5), st.floats(-5, 5))
def test_location_tail_strictly_decreasing(a, b1, b2, r1, r2):
    if abs(r1 - r2) < 1e-6:
        return
    lo, hi = min(r1, r2), max(r1, r2)
    m = LocationMagnitudeMeasure(a, b1, b2)
    assert m.log_tail(lo) > m.log_tail(hi)


@settings(max_examples=40, deadline=None)
@given(alphas, betas, st.floats(0.05, 5.0), st.floats(0.05, 5.0))
def test_scale_intensity_integrates_to_tail_difference(a, b, r1, r2):
    lo, hi = min(r1, r2), max(r1, r2)
    m = ScaleMagnitudeMeasure(a, b)
    val, _ = quad(m.intensity, lo, hi, epsabs=0, epsrel=1e-12, limit=200)
    diff = m.tail_mass(lo) - m.tail_mass(hi)
    assert val == pytest.approx(diff, rel=1e-8, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.3, 3.0), st.floats(0.1, 1.9), st.floats(-3, 3), st.floats(-3, 3))
def test_location_intensity_integrates_to_tail_difference(a, b1, b2, r1, r2):
    lo, hi = min(r1, r2), max(r1, r2)
    if hi - lo < 1e-3:
        return
    m = LocationMagnitudeMeasure(a, b1, b2)

    # integrate in v = |r|^beta on each side, which removes the singular behaviour at 0
    def side(u0, u1, b, sign):
        v0, v1 = u0**b, u1**b
        if v1 - v0 < 1e-13:  # contributes below the absolute tolerance
            return 0.0
        f = lambda v: m.intensity(sign * v ** (1 / b)) * v ** (1 / b - 1) / b  # noqa: E731
        return quad(f, v0, v1, epsabs=0, epsrel=1e-12, limit=200)[0]

    val = 0.0
    if lo < 0:
        val += side(max(-hi, 0.0), -lo, b2, -1.0)
    if hi > 0:
        val += side(max(lo, 0.0), hi, b1, 1.0)
    diff = m.tail_mass(lo) - m.tail_mass(hi)
    assert val == pytest.approx(diff, rel=1e-8, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(alphas, betas, st.floats(-20, 20))
def test_scale_inverse_property(a, b, logm):
    m = ScaleMagnitudeMeasure(a, b)
    target = math.exp(logm)
    r = m.inverse_tail_mass(target)
    assert abs(m.tail_mass(r) - target) / target < 1e-10


@settings(max_examples=60, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.3, 3.0), st.floats(0.1, 1.9), st.floats(-20, 20))
def test_location_inverse_property(a, b1, b2, logm):
    m = LocationMagnitudeMeasure(a, b1, b2)
    target = math.exp(logm)
    r = m.inverse_tail_mass(target)
    assert abs(m.tail_mass(r) - target) / target < 1e-10
