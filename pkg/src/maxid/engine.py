"""Exact simulation of max-id processes by extremal functions.

Sites are visited in a fixed order. At each site the Poisson levels
``z = Lambda^{-1}(E)`` are generated downward from the top; for each level a
profile is drawn from the conditional law of a Poisson function given its
value ``z`` at that site, and it enters the running maximum only if it stays
strictly below the current values at all earlier sites. The loop at a site
stops once the level falls below the current value there.

The truncated baseline simulates the ``n`` largest magnitudes in decreasing
order and takes the pointwise maximum of their functions.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.lapack import dpotrf

from . import _kernels
from .errors import ConcavityViolation, ConfigError, IterationCap, NonIntegrableEnvelope, NumericalError
from .gaussian_fields import ORDERINGS, CorrelationModel, SiteSet, cholesky_jitter, order_sites
from .marginal import MarginalLaw, marginal_law
from .measures import LocationMagnitudeMeasure, ScaleMagnitudeMeasure, _expm1_ratio
from .samplers import (
    ARS_OFFSETS,
    LogConcaveTarget,
    MHConfig,
    PiecewiseHull,
    _mh_chain,
    find_mode,
    random_stream,
)

log = logging.getLogger(__name__)

LEVEL_CAP = 1_000_000
SAMPLERS = ("ars", "mh")
BACKENDS = ("numba", "python")


@dataclass(frozen=True)
class ModelSpec:
    measure: ScaleMagnitudeMeasure | LocationMagnitudeMeasure
    correlation: CorrelationModel = field(default_factory=CorrelationModel)
    sampler: str = "ars"
    mh: MHConfig = field(default_factory=MHConfig)
    ordering: str = "coordinate"

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"unknown magnitude sampler {self.sampler!r}")
        if self.ordering not in ORDERINGS:
            raise ConfigError(f"unknown ordering {self.ordering!r}")
        if self.mixture == "location":
            if self.sampler == "ars":
                raise ConfigError("ARS needs a log-concave target; use the MH sampler for location mixtures")
            if self.correlation.magnitude_dependent:
                raise ConfigError("magnitude-dependent correlation needs r > -1; not available for location mixtures")

    @property
    def mixture(self) -> str:
        return self.measure.kind

    def with_sampler(self, sampler: str) -> "ModelSpec":
        return ModelSpec(self.measure, self.correlation, sampler, self.mh, self.ordering)

    def with_ordering(self, ordering: str) -> "ModelSpec":
        return ModelSpec(self.measure, self.correlation, self.sampler, self.mh, ordering)


@dataclass
class ExtremalFunctionRecord:
    magnitude: float
    values: np.ndarray
    anchor: int
    level: float
    accepted: bool = False


@dataclass
class ReplicateResult:
    values: np.ndarray
    profiles: int
    levels: int
    wall_time: float
    records: list[ExtremalFunctionRecord] | None = None


# --------------------------------------------------------------------------
# conditional magnitude targets


class ScaleMagnitudeTarget:
    """Log-density of ``log R`` given ``R W(s0) = z`` for the scale mixture.

    In ``t = log r`` the density is ``f_R(e^t) phi(z e^{-t})`` (the ``1/r``
    of the change of variables cancels the Jacobian ``e^t``), which is
    concave for every ``alpha > 0, beta >= 0``.
    """

    def __init__(self, measure: ScaleMagnitudeMeasure, z: float):
        self.a = measure.alpha
        self.b = measure.beta
        self.zz = z * z
        self.z = z

    def h(self, t):
        a, b = self.a, self.b
        if t < -350.0:
            return -math.inf
        q = -0.5 * self.zz * math.exp(-2.0 * t)
        if b == 0.0:
            return -(a + 1.0) * t + q
        return -t + math.log(b * math.exp(-b * t) + a) - a * _expm1_ratio(b, t) + q

    def dh(self, t):
        a, b = self.a, self.b
        q = self.zz * math.exp(-2.0 * t)
        if b == 0.0:
            return -(a + 1.0) + q
        e = b * math.exp(-b * t)
        return -1.0 - b * e / (e + a) - a * math.exp(b * t) + q

    def d2h(self, t):
        a, b = self.a, self.b
        q = -2.0 * self.zz * math.exp(-2.0 * t)
        if b == 0.0:
            return q
        e = b * math.exp(-b * t)
        return a * b * b * e / (e + a) ** 2 - a * b * math.exp(b * t) + q

    def mode(self) -> float:
        a, b = self.a, self.b
        if b == 0.0:
            return 0.5 * math.log(self.zz / (a + 1.0))
        return _newton_root(self.dh, self.d2h, 0.5 * math.log(self.zz / (a + 1.0)))


def _newton_root(f, df, x, tol=1e-10):
    """Root of a decreasing function by Newton steps safeguarded with a bracket."""
    fx = f(x)
    lo, hi = -math.inf, math.inf
    if fx > 0:
        lo = x
    else:
        hi = x
    for _ in range(100):
        if fx == 0.0:
            return x
        step = -fx / df(x)
        if abs(step) < tol:
            return x + step
        xn = x + step
        if not (lo < xn < hi):
            if lo > -math.inf and hi < math.inf:
                xn = 0.5 * (lo + hi)
            else:
                xn = x + (1.0 if fx > 0 else -1.0) * max(1.0, abs(step) if math.isfinite(step) else 1.0)
        x, fx = xn, f(xn)
        if fx > 0:
            lo = x
        else:
            hi = x
        if hi - lo < tol:
            return x
    return x


class LocationMagnitudeTarget:
    """Log-density of ``R`` given ``R + W(s0) = z``: ``f_R(r) phi(z - r)``."""

    def __init__(self, measure: LocationMagnitudeMeasure, z: float):
        self.li = measure.log_intensity
        self.z = z

    def h(self, r):
        d = self.z - r
        return self.li(r) - 0.5 * d * d

    def init(self) -> float:
        z = self.z
        res = find_mode(self.h, (z - 12.0, z + 12.0), grid=48)
        if abs(res.x) > 0.05 and math.isfinite(self.h(res.x)):
            return res.x
        # the intensity may be unbounded at 0; start from the best point away from it
        pts = [p for p in np.linspace(z - 12.0, z + 12.0, 49).tolist() if abs(p) > 0.05]
        return max(pts, key=self.h)


# --------------------------------------------------------------------------
# simulator


class Simulator:
    """Exact (and truncated) simulation of one model on one site set."""

    def __init__(
        self,
        spec: ModelSpec,
        sites,
        law: MarginalLaw | None = None,
        ordering_seed: int = 0,
        backend: str = "numba",
    ):
        if backend not in BACKENDS:
            raise ConfigError(f"unknown backend {backend!r}")
        self.spec = spec
        self.backend = backend
        if isinstance(sites, SiteSet):
            coords = sites.coords
        else:
            coords = SiteSet(sites).coords
        self.coords = coords
        self.n_sites = len(coords)
        rng = random_stream(ordering_seed, 0) if spec.ordering == "random" else None
        self.perm = np.asarray(order_sites(coords, spec.ordering, rng), dtype=int)
        self.inv_perm = np.argsort(self.perm)
        self.corr = spec.correlation.prepare(coords[self.perm])
        self.law = law if law is not None else marginal_law(spec.measure)
        self.scale = spec.mixture == "scale"
        self._static = None
        if not spec.correlation.magnitude_dependent:
            sigma = self.corr.matrix(0.0)
            chol, _ = cholesky_jitter(sigma)
            self._static = (sigma, chol)
        self._use_ars = spec.sampler == "ars"
        self._warned = False
        self._kernel_args = self._pack_kernel_args() if backend == "numba" else None

    def _pack_kernel_args(self):
        m, spec = self.spec.measure, self.spec
        if self.scale:
            mix, a, b1, b2 = 0, m.alpha, m.beta, 0.0
        else:
            mix, a, b1, b2 = 1, m.alpha, m.beta1, m.beta2
        mh_init = math.nan if isinstance(spec.mh.init, str) else float(spec.mh.init)
        n = self.n_sites
        if self._static is not None:
            sigma0 = np.ascontiguousarray(self._static[0])
            chol0 = np.ascontiguousarray(self._static[1])
            sdist, pref, nu = np.zeros((n, n)), np.ones((n, n)), 0.0
        else:
            sigma0 = chol0 = np.zeros((n, n))
            sdist = np.ascontiguousarray(self.corr._sdist)
            pref = np.ones((n, n)) if self.corr._pref is None else np.ascontiguousarray(self.corr._pref)
            nu = float(spec.correlation.nu)
        law = self.law
        table = (np.array(law.x), np.array(law.y), np.array(law.m), np.array(law._neg_y), self.scale)
        return (
            mix, float(a), float(b1), float(b2), self._use_ars, float(spec.mh.sigma), int(spec.mh.iterations), mh_init,
            self._static is not None, chol0, sigma0, sdist, pref, nu, *table, LEVEL_CAP,
        )  # fmt: skip

    # -- conditional magnitude

    def conditional_magnitude(self, z: float, rng) -> float:
        m = self.spec.measure
        if self.scale:
            tgt = ScaleMagnitudeTarget(m, z)
            t0 = tgt.mode()
            if self._use_ars:
                try:
                    return math.exp(self._ars(tgt, t0, rng))
                except (ConcavityViolation, NonIntegrableEnvelope, OverflowError) as exc:
                    if not self._warned:
                        log.warning("ARS failed (%s); falling back to Metropolis-Hastings", exc)
                        self._warned = True
            cfg = self.spec.mh
            x = t0 if isinstance(cfg.init, str) else math.log(cfg.init)
            return math.exp(_mh_chain(tgt.h, x, tgt.h(x), cfg.sigma, int(cfg.iterations), rng))
        tgt = LocationMagnitudeTarget(m, z)
        cfg = self.spec.mh
        x = tgt.init() if isinstance(cfg.init, str) else float(cfg.init)
        return _mh_chain(tgt.h, x, tgt.h(x), cfg.sigma, int(cfg.iterations), rng)

    def _ars(self, tgt: ScaleMagnitudeTarget, mode: float, rng) -> float:
        curv = tgt.d2h(mode)
        s = 1.0 / math.sqrt(-curv) if curv < 0 else 1.0
        xs = [mode + o * s for o in ARS_OFFSETS]
        h, dh = tgt.h, tgt.dh
        hs = [h(x) for x in xs]
        dhs = [dh(x) for x in xs]
        k = 0
        while dhs[0] <= 0 and k < 60:
            xs.insert(0, xs[0] - s * 2**k), hs.insert(0, h(xs[0])), dhs.insert(0, dh(xs[0]))
            k += 1
        k = 0
        while dhs[-1] >= 0 and k < 60:
            xs.append(xs[-1] + s * 2**k), hs.append(h(xs[-1])), dhs.append(dh(xs[-1]))
            k += 1
        hull = PiecewiseHull(xs, hs, dhs)
        for _ in range(10_000):
            u1, u2, u3 = rng.random(3).tolist()
            r = hull.sample(u1, u2)
            u_r = hull.upper(r)
            lw = math.log(u3) if u3 > 0 else -math.inf
            if lw <= hull.lower(r) - u_r:
                return r
            h_r = h(r)
            if lw <= h_r - u_r:
                return r
            hull.insert(r, h_r, dh(r))
        raise NonIntegrableEnvelope("ARS did not accept within 10000 proposals")

    # -- conditional profile

    def _field(self, anchor: int, w0: float, r: float, rng) -> np.ndarray:
        if self._static is not None:
            sigma, chol = self._static
        else:
            sigma = self.corr.matrix(r)
            chol, info = dpotrf(sigma, lower=1, clean=1, overwrite_a=0)
            if info != 0:
                chol, _ = cholesky_jitter(sigma)
        w = chol @ rng.standard_normal(self.n_sites)
        w += sigma[:, anchor] * (w0 - w[anchor])
        w[anchor] = w0
        return w

    def _profile_ordered(self, anchor: int, z: float, rng):
        r = self.conditional_magnitude(z, rng)
        if self.scale:
            y = r * self._field(anchor, z / r, r, rng)
        else:
            y = r + self._field(anchor, z - r, r, rng)
        y[anchor] = z
        return r, y

    def conditional_profile(self, anchor: int, z: float, rng) -> ExtremalFunctionRecord:
        """Profile over all sites of a Poisson function with value ``z`` at site ``anchor``.

        ``anchor`` and the returned values use the input site order.
        """
        a = int(self.inv_perm[anchor])
        r, y = self._profile_ordered(a, z, rng)
        return ExtremalFunctionRecord(r, y[self.inv_perm], anchor, z)

    # -- replicates

    def simulate(self, rng, keep_profiles: bool = False) -> ReplicateResult:
        if self._kernel_args is not None and not keep_profiles:
            t0 = time.perf_counter()
            state = rng.bit_generator.state
            try:
                values, profiles, levels, status = _kernels.simulate_ordered(*self._kernel_args, rng)
            except np.linalg.LinAlgError:
                status = -1
            if status == _kernels.OK:
                return ReplicateResult(values[self.inv_perm], int(profiles), int(levels), time.perf_counter() - t0)
            if status == _kernels.LEVEL_CAP_HIT:
                raise IterationCap(f"more than {LEVEL_CAP} levels at one site")
            # rare cases (level outside the table, ARS failure, jitter needed): redo in Python
            rng.bit_generator.state = state
        return self._simulate_python(rng, keep_profiles)

    def _simulate_python(self, rng, keep_profiles: bool = False) -> ReplicateResult:
        t0 = time.perf_counter()
        law = self.law
        n_sites = self.n_sites
        records = [] if keep_profiles else None
        e = rng.exponential()
        z = law.level(e)
        r, y = self._profile_ordered(0, z, rng)
        values = y.copy()
        profiles, levels = 1, 1
        if keep_profiles:
            records.append(ExtremalFunctionRecord(r, y, 0, z, True))
        for n in range(1, n_sites):
            e = rng.exponential()
            z = law.level(e)
            levels += 1
            site_levels = 0
            while z > values[n]:
                r, y = self._profile_ordered(n, z, rng)
                profiles += 1
                ok = bool(np.all(y[:n] < values[:n]))
                if ok:
                    np.maximum(values, y, out=values)
                if keep_profiles:
                    records.append(ExtremalFunctionRecord(r, y, n, z, ok))
                e += rng.exponential()
                z = law.level(e)
                levels += 1
                site_levels += 1
                if site_levels > LEVEL_CAP:
                    raise IterationCap(f"more than {LEVEL_CAP} levels at site {n}")
        if keep_profiles:
            for rec in records:
                rec.values = rec.values[self.inv_perm]
                rec.anchor = int(self.perm[rec.anchor])
        return ReplicateResult(values[self.inv_perm], profiles, levels, time.perf_counter() - t0, records)

    def naive(self, n: int, rng) -> ReplicateResult:
        """Pointwise maximum of the ``n`` functions with the largest magnitudes."""
        if n < 1:
            raise ConfigError("truncation level must be >= 1")
        t0 = time.perf_counter()
        gammas = np.cumsum(rng.exponential(size=n))
        mags = np.atleast_1d(self.spec.measure.inverse_tail_mass(gammas))
        ns = self.n_sites
        g = rng.standard_normal((n, ns))
        if self._static is not None:
            w = g @ self._static[1].T
        else:
            w = np.empty((n, ns))
            chunk = max(1, int(2e7 // (ns * ns)))
            for i in range(0, n, chunk):
                sig = self.corr.matrices(mags[i : i + chunk])
                try:
                    chol = np.linalg.cholesky(sig)
                except np.linalg.LinAlgError:
                    chol = np.stack([cholesky_jitter(s)[0] for s in sig])
                w[i : i + chunk] = np.einsum("kij,kj->ki", chol, g[i : i + chunk])
        vals = mags[:, None] * w if self.scale else mags[:, None] + w
        z = vals.max(axis=0)
        return ReplicateResult(z[self.inv_perm], n, n, time.perf_counter() - t0)

    def run(self, method: str, rng) -> ReplicateResult:
        kind, n = parse_method(method)
        if kind == "naive":
            return self.naive(n, rng)
        return self.simulate(rng)


# --------------------------------------------------------------------------
# functional interface


def parse_method(method: str) -> tuple[str, int]:
    """``exact-ars``/``exact-mh`` -> (sampler, 0); ``naive:<n>`` -> ('naive', n)."""
    m = method.strip().lower()
    if m in ("exact-ars", "exact-mh"):
        return m.split("-")[1], 0
    if m.startswith("naive"):
        _, _, n = m.partition(":")
        try:
            n = int(n) if n else 100
        except ValueError:
            raise ConfigError(f"bad truncation in method {method!r}") from None
        if n < 1:
            raise ConfigError("naive truncation must be >= 1")
        return "naive", n
    raise ConfigError(f"unknown method {method!r}; use exact-ars, exact-mh or naive:<n>")


def spec_for_method(spec: ModelSpec, method: str) -> ModelSpec:
    kind, _ = parse_method(method)
    return spec if kind == "naive" else spec.with_sampler(kind)


def simulate_replicate(spec: ModelSpec, sites, rng) -> ReplicateResult:
    return Simulator(spec, sites).simulate(rng)


def conditional_magnitude(spec: ModelSpec, z: float, rng) -> float:
    return Simulator(spec, [[0.0]]).conditional_magnitude(z, rng)


def conditional_profile(spec: ModelSpec, sites, anchor: int, z: float, rng) -> ExtremalFunctionRecord:
    return Simulator(spec, sites).conditional_profile(anchor, z, rng)


def naive_simulate(spec: ModelSpec, sites, n: int, rng) -> ReplicateResult:
    return Simulator(spec, sites).naive(n, rng)


@dataclass
class BatchResult:
    values: np.ndarray
    profiles: np.ndarray
    levels: np.ndarray
    times: np.ndarray
    method: str


_WORKER: dict = {}


def _init_worker(sim, method, seed):
    _WORKER.update(sim=sim, method=method, seed=seed)


def _run_one(sim, method, seed, i):
    try:
        return sim.run(method, random_stream(seed, i))
    except NumericalError as exc:
        raise type(exc)(f"replicate {i}: {exc}") from exc


def _run_chunk(bounds):
    lo, hi = bounds
    sim, method, seed = _WORKER["sim"], _WORKER["method"], _WORKER["seed"]
    return lo, [_run_one(sim, method, seed, i) for i in range(lo, hi)]


def simulate_batch(
    spec: ModelSpec,
    sites,
    n_replicates: int,
    seed: int,
    method: str = "exact-ars",
    workers: int = 1,
    progress=None,
) -> BatchResult:
    """``n_replicates`` independent replicates; replicate ``i`` uses stream ``i``.

    Output is identical for any ``workers`` count.
    """
    sim = Simulator(spec_for_method(spec, method), sites)
    n_sites = sim.n_sites
    values = np.empty((n_replicates, n_sites))
    profiles = np.empty(n_replicates, dtype=np.int64)
    levels = np.empty(n_replicates, dtype=np.int64)
    times = np.empty(n_replicates)

    def store(i, res):
        values[i] = res.values
        profiles[i] = res.profiles
        levels[i] = res.levels
        times[i] = res.wall_time

    if workers <= 1:
        for i in range(n_replicates):
            store(i, _run_one(sim, method, seed, i))
            if progress is not None:
                progress(i + 1)
    else:
        step = max(1, min(500, n_replicates // (4 * workers) or 1))
        chunks = [(lo, min(lo + step, n_replicates)) for lo in range(0, n_replicates, step)]
        done = 0
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(sim, method, seed)) as pool:
            for lo, out in pool.map(_run_chunk, chunks):
                for k, res in enumerate(out):
                    store(lo + k, res)
                done += len(out)
                if progress is not None:
                    progress(done)
    return BatchResult(values, profiles, levels, times, method)


def count_profile_statistics(spec: ModelSpec, sites, n_replicates: int, seed: int, orderings=ORDERINGS) -> dict:
    """Mean and variance of the number of simulated profiles per ordering."""
    out = {}
    for ordering in orderings:
        sim = Simulator(spec.with_ordering(ordering), sites)
        counts = np.array([sim.simulate(random_stream(seed, i)).profiles for i in range(n_replicates)])
        out[ordering] = {
            "mean": float(counts.mean()),
            "variance": float(counts.var(ddof=1)) if n_replicates > 1 else 0.0,
            "stderr": float(counts.std(ddof=1) / math.sqrt(n_replicates)) if n_replicates > 1 else 0.0,
            "n": n_replicates,
        }
    return out
