"""Gaussian building blocks: site sets, correlation models, Cholesky factors,
conditional simulation and the bivariate normal distribution function."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform
from scipy.special import ndtr

from .errors import ConfigError, NotPositiveDefinite

ORDERINGS = ("coordinate", "random", "middle-out", "maxmin")
# correlations below exp(-300) are set to zero; this keeps subnormal numbers,
# which are very slow on most CPUs, out of the Cholesky factorisation
LOG_CORRELATION_FLOOR = -300.0
JITTERS = (0.0, 1e-14, 1e-12, 1e-10)
_SQRT2 = math.sqrt(2.0)
_TWO_PI = 2.0 * math.pi


# --------------------------------------------------------------------------
# sites


def as_coords(sites) -> np.ndarray:
    """``(N, d)`` float array; a flat sequence is read as N points on a line."""
    c = np.asarray(sites, dtype=float)
    if c.ndim == 0:
        c = c.reshape(1, 1)
    elif c.ndim == 1:
        c = c[:, None]
    return c


def grid_sites(n1: int, n2: int | None = None) -> np.ndarray:
    """Regular ``n1 x n2`` grid strictly inside the unit square."""
    n2 = n1 if n2 is None else n2
    xs = np.arange(1, n1 + 1) / (n1 + 1)
    ys = np.arange(1, n2 + 1) / (n2 + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def order_sites(coords, strategy: str = "coordinate", rng=None) -> np.ndarray:
    """Permutation giving the simulation order of ``coords``.

    ``coordinate`` sorts lexicographically (first coordinate first),
    ``random`` shuffles, ``middle-out`` sorts by distance to the centroid and
    ``maxmin`` starts at the most central site and then repeatedly takes the
    site farthest from those already chosen.
    """
    coords = as_coords(coords)
    n = len(coords)
    if strategy == "coordinate":
        return np.lexsort(coords.T[::-1])
    if strategy == "random":
        if rng is None:
            raise ConfigError("random ordering needs a generator")
        return rng.permutation(n)
    centre = coords.mean(axis=0)
    d0 = np.linalg.norm(coords - centre, axis=1)
    if strategy == "middle-out":
        return np.argsort(d0, kind="stable")
    if strategy == "maxmin":
        order = [int(np.argmin(d0))]
        mind = np.linalg.norm(coords - coords[order[0]], axis=1)
        for _ in range(n - 1):
            nxt = int(np.argmax(mind))
            order.append(nxt)
            mind = np.minimum(mind, np.linalg.norm(coords - coords[nxt], axis=1))
        return np.asarray(order)
    raise ConfigError(f"unknown ordering {strategy!r}; expected one of {ORDERINGS}")


@dataclass(frozen=True)
class SiteSet:
    coords: np.ndarray
    ordering: str = "coordinate"

    def __post_init__(self):
        c = as_coords(self.coords)
        if c.ndim != 2:
            raise ConfigError("sites must be an (N, d) array")
        if len(c) > 1 and np.min(pdist(c)) == 0.0:
            raise ConfigError("sites must be pairwise distinct")
        if self.ordering not in ORDERINGS:
            raise ConfigError(f"unknown ordering {self.ordering!r}")
        object.__setattr__(self, "coords", c)

    def __len__(self):
        return len(self.coords)

    def permutation(self, rng=None) -> np.ndarray:
        return order_sites(self.coords, self.ordering, rng)


# --------------------------------------------------------------------------
# correlation


RANGE_SURFACES = {
    # spatially constant range lambda
    "constant": lambda coords, value: np.full(len(coords), float(value)),
    # exp(2 - 0.5 Phi((s_x - 0.5) / 0.25))
    "probit-x": lambda coords, value: np.exp(2.0 - 0.5 * ndtr((coords[:, 0] - 0.5) / 0.25)),
}


@dataclass(frozen=True)
class CorrelationModel:
    """Either ``exp(-rate * h)`` or the magnitude-dependent nonstationary family

    ``rho = l1 l2 / m * exp(-(1 + r)**nu * h / sqrt(m))`` with ``m = (l1**2 + l2**2) / 2``
    and ``l = lambda_s`` from a named analytic range surface.
    """

    kind: str = "exponential"
    rate: float = 1.0
    nu: float = 0.0
    surface: str = "constant"
    surface_value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("exponential", "nonstationary"):
            raise ConfigError(f"unknown correlation kind {self.kind!r}")
        if self.kind == "exponential" and not self.rate > 0:
            raise ConfigError("exponential rate must be positive")
        if self.kind == "nonstationary":
            if not self.nu >= 0:
                raise ConfigError("nu must be nonnegative")
            if self.surface not in RANGE_SURFACES:
                raise ConfigError(f"unknown range surface {self.surface!r}")
            if self.surface == "constant" and not self.surface_value > 0:
                raise ConfigError("constant range must be positive")

    @property
    def magnitude_dependent(self) -> bool:
        return self.kind == "nonstationary" and self.nu != 0.0

    def ranges(self, coords) -> np.ndarray:
        coords = as_coords(coords)
        return RANGE_SURFACES[self.surface](coords, self.surface_value)

    def prepare(self, coords) -> "PreparedCorrelation":
        return PreparedCorrelation(self, as_coords(coords))

    def pair_function(self, s1, s2):
        """``r -> rho(s1, s2; r)`` for one pair of sites, cheap to call repeatedly."""
        pts = np.vstack([np.asarray(s1, dtype=float).reshape(1, -1), np.asarray(s2, dtype=float).reshape(1, -1)])
        d = float(np.linalg.norm(pts[0] - pts[1]))
        if self.kind == "exponential":
            rho = math.exp(-self.rate * d)
            return lambda r: rho
        l1, l2 = (float(v) for v in self.ranges(pts))
        msq = 0.5 * (l1 * l1 + l2 * l2)
        pref, c, nu = l1 * l2 / msq, -d / math.sqrt(msq), self.nu
        if nu == 0.0:
            rho = pref * math.exp(c)
            return lambda r: rho
        return lambda r: pref * math.exp(c * (1.0 + r) ** nu)

    def cross(self, coords_a, coords_b, r: float = 0.0) -> np.ndarray:
        a = as_coords(coords_a)
        b = as_coords(coords_b)
        dist = cdist(a, b)
        if self.kind == "exponential":
            return np.exp(-self.rate * dist)
        la, lb = self.ranges(a)[:, None], self.ranges(b)[None, :]
        msq = 0.5 * (la**2 + lb**2)
        scale = (1.0 + r) ** self.nu if self.nu else 1.0
        return (la * lb / msq) * np.exp(-scale * dist / np.sqrt(msq))


def correlation(model: CorrelationModel, s1, s2, r: float = 0.0) -> float:
    """Correlation between two sites for a field of magnitude ``r``."""
    a = np.asarray(s1, dtype=float).reshape(1, -1)
    b = np.asarray(s2, dtype=float).reshape(1, -1)
    return float(model.cross(a, b, r)[0, 0])


class PreparedCorrelation:
    """Correlation matrices on a fixed site set, evaluated cheaply per magnitude."""

    def __init__(self, model: CorrelationModel, coords: np.ndarray):
        self.model = model
        self.coords = coords
        dist = squareform(pdist(coords)) if len(coords) > 1 else np.zeros((1, 1))
        if model.kind == "exponential":
            self._pref = None
            self._sdist = -model.rate * dist
        else:
            lam = model.ranges(coords)
            msq = 0.5 * (lam[:, None] ** 2 + lam[None, :] ** 2)
            self._pref = lam[:, None] * lam[None, :] / msq
            self._sdist = -dist / np.sqrt(msq)
        self._static = None if model.magnitude_dependent else self._compute(0.0)

    def _compute(self, r):
        arg = self._sdist * (1.0 + r) ** self.model.nu if self.model.magnitude_dependent else self._sdist.copy()
        arg[arg < LOG_CORRELATION_FLOOR] = -np.inf
        out = np.exp(arg, out=arg)
        if self._pref is not None:
            out *= self._pref
        return out

    def matrix(self, r: float = 0.0) -> np.ndarray:
        if self._static is not None:
            return self._static
        return self._compute(r)

    def matrices(self, rs) -> np.ndarray:
        """Stack of correlation matrices for an array of magnitudes."""
        rs = np.asarray(rs, dtype=float)
        if self._static is not None:
            return np.broadcast_to(self._static, (len(rs),) + self._static.shape)
        scale = (1.0 + rs) ** self.model.nu
        arg = self._sdist[None] * scale[:, None, None]
        arg[arg < LOG_CORRELATION_FLOOR] = -np.inf
        out = np.exp(arg, out=arg)
        if self._pref is not None:
            out *= self._pref[None]
        return out


# --------------------------------------------------------------------------
# factorisation and simulation


@dataclass(frozen=True)
class FactorizedCovariance:
    sigma: np.ndarray
    chol: np.ndarray
    jitter: float = 0.0


def cholesky_jitter(sigma: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor with jitter escalated through ``JITTERS``."""
    n = sigma.shape[-1]
    for jitter in JITTERS:
        try:
            a = sigma if jitter == 0.0 else sigma + jitter * np.eye(n)
            return np.linalg.cholesky(a), jitter
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefinite(f"correlation matrix of size {n} is not positive definite at jitter {JITTERS[-1]}")


def factorize(model: CorrelationModel, sites, r: float = 0.0) -> FactorizedCovariance:
    coords = sites.coords if isinstance(sites, SiteSet) else as_coords(sites)
    sigma = model.prepare(coords).matrix(r)
    chol, jitter = cholesky_jitter(sigma)
    return FactorizedCovariance(np.array(sigma), chol, jitter)


def sample_mvn(factor: FactorizedCovariance, rng: np.random.Generator) -> np.ndarray:
    return factor.chol @ rng.standard_normal(factor.chol.shape[0])


def conditional_from_factor(chol, cross, anchor, w0, rng):
    """Draw ``W | W(anchor) = w0`` given a factor of the full correlation matrix.

    Uses ``W' + cross * (w0 - W'(anchor))`` with ``W'`` unconditional and
    ``cross`` the column of correlations with the anchor, which has exactly
    the conditional mean ``cross * w0`` and covariance ``Sigma - cross cross^T``.
    """
    w = chol @ rng.standard_normal(chol.shape[0])
    w += cross * (w0 - w[anchor])
    w[anchor] = w0
    return w


def conditional_mvn_given_site(model: CorrelationModel, sites, s0, w0: float, r: float, rng) -> np.ndarray:
    """Gaussian field on ``sites`` conditioned on ``W(s0) = w0`` at magnitude ``r``."""
    coords = sites.coords if isinstance(sites, SiteSet) else as_coords(sites)
    s0 = np.asarray(s0, dtype=float).reshape(1, -1)
    hit = np.flatnonzero(np.all(coords == s0, axis=1))
    if hit.size:
        anchor, full = int(hit[0]), coords
    else:
        anchor, full = len(coords), np.vstack([coords, s0])
    sigma = model.prepare(full).matrix(r)
    chol, _ = cholesky_jitter(sigma)
    w = conditional_from_factor(chol, sigma[:, anchor], anchor, float(w0), rng)
    return w[: len(coords)]


# --------------------------------------------------------------------------
# bivariate normal distribution function

# Gauss-Legendre half-nodes for 6, 12 and 20 points
_GL_X = (
    (0.9324695142031522, 0.6612093864662647, 0.2386191860831970),
    (0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
     0.5873179542866171, 0.3678314989981802, 0.1252334085114692),
    (0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
     0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
     0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
     0.07652652113349733),
)
_GL_W = (
    (0.1713244923791705, 0.3607615730481384, 0.4679139345726904),
    (0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
     0.2031674267230659, 0.2334925365383547, 0.2491470458134029),
    (0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
     0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
     0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
     0.1527533871307259),
)


def _phi_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def bivariate_normal_sf(h: float, k: float, r: float) -> float:
    """``P(X > h, Y > k)`` for standard normals with correlation ``r``.

    Drezner-Wesolowsky with Genz's refinements; double precision accuracy.
    """
    if h == math.inf or k == math.inf:
        return 0.0
    if h == -math.inf:
        return _phi_cdf(-k)
    if k == -math.inf:
        return _phi_cdf(-h)
    ar = abs(r)
    g = 0 if ar < 0.3 else (1 if ar < 0.75 else 2)
    xs, ws = _GL_X[g], _GL_W[g]
    hk = h * k
    if ar < 0.925:
        hs = 0.5 * (h * h + k * k)
        asr = 0.5 * math.asin(r)
        acc = 0.0
        for x, w in zip(xs, ws):
            for node in (1.0 - x, 1.0 + x):
                sn = math.sin(asr * node)
                acc += w * math.exp((sn * hk - hs) / (1.0 - sn * sn))
        return acc * asr / _TWO_PI + _phi_cdf(-h) * _phi_cdf(-k)
    if r < 0:
        k = -k
        hk = -hk
    p = 0.0
    if ar < 1.0:
        a2 = (1.0 - r) * (1.0 + r)
        a = math.sqrt(a2)
        bs = (h - k) ** 2
        asr = -0.5 * (bs / a2 + hk)
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 80.0
        # terms are dropped below exp(-100) relative to the tail scale exp(-hk/2),
        # so that the result stays accurate in relative terms deep in the tail
        floor = -100.0 - 0.5 * max(hk, 0.0)
        if asr > floor:
            p = a * math.exp(asr) * (1.0 - c * (bs - a2) * (1.0 - d * bs) / 3.0 + c * d * a2 * a2)
        if hk > -100.0:
            b = math.sqrt(bs)
            sp = math.sqrt(_TWO_PI) * _phi_cdf(-b / a)
            p -= math.exp(-0.5 * hk) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0)
        a *= 0.5
        acc = 0.0
        for x, w in zip(xs, ws):
            for node in (1.0 - x, 1.0 + x):
                xs2 = (a * node) ** 2
                asr = -0.5 * (bs / xs2 + hk)
                if asr > floor:
                    sp = 1.0 + c * xs2 * (1.0 + 5.0 * d * xs2)
                    rs = math.sqrt(1.0 - xs2)
                    ep = math.exp(-0.5 * hk * xs2 / (1.0 + rs) ** 2) / rs
                    acc += w * math.exp(asr) * (sp - ep)
        p = (a * acc - p) / _TWO_PI
    if r > 0:
        return max(p + _phi_cdf(-max(h, k)), 0.0)
    if h >= k:
        return max(-p, 0.0)
    lower = _phi_cdf(k) - _phi_cdf(h) if h < 0 else _phi_cdf(-h) - _phi_cdf(-k)
    return max(lower - p, 0.0)


def bivariate_normal_cdf(a: float, b: float, rho: float) -> float:
    """``P(X <= a, Y <= b)`` for standard normals with correlation ``rho``."""
    return bivariate_normal_sf(-a, -b, rho)


def bivariate_exceedance(a: float, b: float, rho: float) -> float:
    """``1 - P(X <= a, Y <= b)``, computed without cancellation in the upper tail."""
    return _phi_cdf(-a) + _phi_cdf(-b) - bivariate_normal_sf(a, b, rho)
