import math

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import cumulative_trapezoid, quad
from scipy.special import ndtr

from conftest import BROWN_RESNICK, EXTREMAL_T, GRID49, LOCATION_SKEW, PAPER_S4
from maxid.engine import (
    ModelSpec,
    Simulator,
    conditional_magnitude,
    conditional_profile,
    count_profile_statistics,
    naive_simulate,
    parse_method,
    simulate_batch,
    simulate_replicate,
)
from maxid.errors import ConfigError, NumericalError
from maxid.gaussian_fields import CorrelationModel, grid_sites
from maxid.marginal import marginal_law
from maxid.measures import LocationMagnitudeMeasure, ScaleMagnitudeMeasure
from maxid.samplers import MHConfig, random_stream


def _scale_conditional_cdf(measure, z):
    """CDF of R given R W = z from f_R(r) phi(z / r) / r, tabulated in t = log r."""
    t = np.linspace(-8.0, 6.0, 400_001)
    r = np.exp(t)
    with np.errstate(divide="ignore"):
        logf = np.log(measure.intensity(r)) - 0.5 * (z / r) ** 2  # the 1/r and the Jacobian r cancel
    dens = np.exp(logf - logf.max())
    cum = cumulative_trapezoid(dens, t, initial=0.0)
    cum /= cum[-1]
    return lambda x: np.interp(np.log(x), t, cum), (t, dens / np.trapezoid(dens, t))


def test_model_spec_validation():
    with pytest.raises(ConfigError):
        ModelSpec(LocationMagnitudeMeasure(1.0, 1.0, 1.0))  # ARS on a location mixture
    with pytest.raises(ConfigError):
        ModelSpec(
            LocationMagnitudeMeasure(1.0, 1.0, 1.0),
            CorrelationModel("nonstationary", nu=1.0),
            sampler="mh",
        )
    with pytest.raises(ConfigError):
        ModelSpec(ScaleMagnitudeMeasure(1.0), sampler="gibbs")
    with pytest.raises(ConfigError):
        ModelSpec(ScaleMagnitudeMeasure(1.0), ordering="spiral")
    with pytest.raises(ConfigError):
        Simulator(PAPER_S4, GRID49[:4], backend="fortran")


def test_parse_method():
    assert parse_method("exact-ars") == ("ars", 0)
    assert parse_method("EXACT-MH") == ("mh", 0)
    assert parse_method("naive:250") == ("naive", 250)
    for bad in ("naive:0", "naive:x", "exact"):
        with pytest.raises(ConfigError):
            parse_method(bad)


@pytest.mark.parametrize("sampler", ["ars", "mh"])
def test_conditional_magnitude_matches_quadrature(sampler):
    spec = ModelSpec(ScaleMagnitudeMeasure(5.0, 2.0), sampler=sampler)
    cdf, _ = _scale_conditional_cdf(spec.measure, 2.0)
    rng = random_stream(31)
    draws = np.array([conditional_magnitude(spec, 2.0, rng) for _ in range(10_000)])
    tol = 0.01 if sampler == "ars" else 0.015
    assert stats.kstest(draws, cdf).statistic < tol


def test_conditional_magnitude_ars_vs_mh():
    spec = ModelSpec(ScaleMagnitudeMeasure(5.0, 2.0))
    sim_a, sim_m = Simulator(spec, [[0.0]]), Simulator(spec.with_sampler("mh"), [[0.0]])
    rng = random_stream(32)
    a = [sim_a.conditional_magnitude(1.3, rng) for _ in range(10_000)]
    b = [sim_m.conditional_magnitude(1.3, rng) for _ in range(10_000)]
    assert stats.ks_2samp(a, b).statistic < 0.02


def test_location_conditional_magnitude_mean():
    # alpha = beta1 = beta2 = 1, z = 0: the target is exp(-r - r^2 / 2), i.e. N(-1, 1)
    spec = BROWN_RESNICK
    rng = random_stream(33)
    sim = Simulator(spec, [[0.0]])
    draws = np.array([sim.conditional_magnitude(0.0, rng) for _ in range(10_000)])
    assert abs(draws.mean() + 1.0) < 0.02


def test_location_skew_conditional_magnitude_mean():
    m = LOCATION_SKEW.measure
    z = 0.7
    f = lambda r: math.exp(m.log_intensity(r) - 0.5 * (z - r) ** 2)  # noqa: E731
    num = sum(quad(lambda r: r * f(r), a, b, limit=200)[0] for a, b in ((-15, 0), (0, 15)))
    den = sum(quad(f, a, b, limit=200)[0] for a, b in ((-15, 0), (0, 15)))
    sim = Simulator(LOCATION_SKEW, [[0.0]])
    rng = random_stream(34)
    draws = np.array([sim.conditional_magnitude(z, rng) for _ in range(10_000)])
    assert abs(draws.mean() - num / den) < 0.03


def test_profile_anchor_invariant_and_determinism():
    coords = GRID49[:10]
    for spec in (PAPER_S4, PAPER_S4.with_sampler("mh"), LOCATION_SKEW):
        for anchor in (0, 4, 9):
            rec = conditional_profile(spec, coords, anchor, 0.8, random_stream(1, anchor))
            assert rec.values[anchor] == 0.8
            again = conditional_profile(spec, coords, anchor, 0.8, random_stream(1, anchor))
            assert np.array_equal(rec.values, again.values) and rec.magnitude == again.magnitude


def test_far_apart_profile_matches_mixture_oracle():
    spec = ModelSpec(ScaleMagnitudeMeasure(5.0, 2.0), CorrelationModel("exponential", rate=50.0))
    z = 1.2
    sim = Simulator(spec, [[0.0], [10.0]])
    rng = random_stream(35)
    other = np.array([sim.conditional_profile(0, z, rng).values[1] for _ in range(10_000)])
    _, (t, dens) = _scale_conditional_cdf(spec.measure, z)
    t, dens = t[::20], dens[::20]
    r = np.exp(t)
    grid = np.linspace(other.min(), other.max(), 4001)
    table = np.array([np.trapezoid(dens * ndtr(y / r), t) for y in grid])
    ys = np.sort(other)
    emp = np.arange(1, len(ys) + 1) / len(ys)
    theo = np.interp(ys, grid, table)
    assert np.max(np.abs(emp - theo)) < 0.02


def test_single_site_replicate():
    rng = random_stream(36)
    for spec in (PAPER_S4, LOCATION_SKEW):
        res = simulate_replicate(spec, [[0.5, 0.5]], rng)
        assert res.profiles == 1 and res.levels == 1


def test_single_site_marginal():
    law = marginal_law(PAPER_S4.measure)
    batch = simulate_batch(PAPER_S4, [[0.5, 0.5]], 20_000, seed=37)
    assert np.all(batch.profiles == 1)
    assert stats.kstest(batch.values[:, 0], law.cdf).statistic < 0.012


@pytest.mark.parametrize(
    "spec",
    [PAPER_S4, PAPER_S4.with_sampler("mh"), EXTREMAL_T, BROWN_RESNICK, LOCATION_SKEW],
    ids=["s4-ars", "s4-mh", "extremal-t", "brown-resnick", "location-skew"],
)
def test_backends_agree(spec):
    coords = GRID49[::3]
    fast, ref = Simulator(spec, coords), Simulator(spec, coords, backend="python")
    for i in range(100):
        a = fast.simulate(random_stream(38, i))
        b = ref.simulate(random_stream(38, i))
        assert a.profiles == b.profiles and a.levels == b.levels
        np.testing.assert_allclose(a.values, b.values, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("spec", [PAPER_S4, LOCATION_SKEW], ids=["s4", "location-skew"])
def test_coupling_invariants(spec):
    sim = Simulator(spec, GRID49[::2], backend="python")
    for i in range(40):
        res = sim.simulate(random_stream(39, i), keep_profiles=True)
        z = res.values
        accepted = [rec for rec in res.records if rec.accepted]
        assert res.profiles == len(res.records) >= 1
        for rec in res.records:
            assert rec.values[rec.anchor] == rec.level
        for rec in accepted:
            assert np.all(rec.values <= z)
            assert z[rec.anchor] >= rec.level
        stacked = np.array([rec.values for rec in accepted])
        assert np.array_equal(stacked.max(axis=0), z)
        # each site value is attained by an accepted function
        assert all(np.any(stacked[:, k] == z[k]) for k in range(len(z)))


def test_rejected_profiles_exceed_somewhere_earlier():
    sim = Simulator(PAPER_S4, GRID49[::4], backend="python")
    order = list(sim.perm)
    for i in range(30):
        res = sim.simulate(random_stream(40, i), keep_profiles=True)
        running = None
        for rec in res.records:
            pos = order.index(rec.anchor)
            if running is None:
                running = rec.values.copy()
                continue
            earlier = [order[k] for k in range(pos)]
            below = np.all(rec.values[earlier] < running[earlier])
            assert below == rec.accepted
            if rec.accepted:
                running = np.maximum(running, rec.values)


def test_naive_magnitudes_descending():
    spec = PAPER_S4
    rng = random_stream(41)
    gammas = np.cumsum(rng.exponential(size=500))
    r = spec.measure.inverse_tail_mass(gammas)
    assert np.all(np.diff(r) < 0)
    res = naive_simulate(spec, GRID49[:5], 100, random_stream(41))
    assert res.profiles == 100 and res.values.shape == (5,)


@pytest.mark.slow
def test_naive_large_truncation_single_site():
    law = marginal_law(PAPER_S4.measure)
    sim = Simulator(PAPER_S4, [[0.5, 0.5]])
    rng = random_stream(42)
    z = np.array([sim.naive(10_000, rng).values[0] for _ in range(10_000)])
    assert stats.kstest(z, law.cdf).statistic < 0.02


def test_batch_identical_across_worker_counts():
    a = simulate_batch(PAPER_S4, GRID49[:9], 24, seed=5, workers=1)
    b = simulate_batch(PAPER_S4, GRID49[:9], 24, seed=5, workers=2)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.profiles, b.profiles)
    c = simulate_batch(PAPER_S4, GRID49[:9], 24, seed=6, workers=1)
    assert not np.array_equal(a.values, c.values)


def test_batch_errors_carry_replicate_index(monkeypatch):
    def boom(self, rng, keep_profiles=False):
        raise NumericalError("synthetic failure")

    monkeypatch.setattr(Simulator, "simulate", boom)
    with pytest.raises(NumericalError, match="replicate 0"):
        simulate_batch(PAPER_S4, GRID49[:2], 3, seed=1)


def test_count_statistics_single_site():
    out = count_profile_statistics(PAPER_S4, [[0.5, 0.5]], 50, seed=1)
    for stats_ in out.values():
        assert stats_["mean"] == 1.0 and stats_["variance"] == 0.0


def test_count_statistics_mean_within_three_se():
    sites = grid_sites(3)
    spec = ModelSpec(ScaleMagnitudeMeasure(1.0, 1.0), CorrelationModel("exponential", rate=1.0))
    out = count_profile_statistics(spec, sites, 2000, seed=43)
    for ordering, s in out.items():
        assert abs(s["mean"] - 9) < 3 * s["stderr"], ordering


def test_orderings_agree_on_mean_count():
    out = count_profile_statistics(PAPER_S4, GRID49, 500, seed=44)
    means = [s["mean"] for s in out.values()]
    assert (max(means) - min(means)) / min(means) < 0.05


def test_mh_config_reaches_engine():
    spec = ModelSpec(ScaleMagnitudeMeasure(5.0, 2.0), sampler="mh", mh=MHConfig(0.5, 3, 1.0))
    # three steps from r = 1: the draw stays within three proposal sd of log 1 on the log scale
    rng = random_stream(45)
    draws = [conditional_magnitude(spec, 1.0, rng) for _ in range(500)]
    assert max(abs(math.log(d)) for d in draws) < 3 * 0.5 * 6
