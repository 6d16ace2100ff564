"""Exact simulation of max-infinitely divisible processes built from Gaussian
scale and location mixtures, with extremal-coefficient and KL diagnostics."""

__version__ = "0.1.0"

from .diagnostics import (
    ExtremalCoefficientCurve,
    KLReport,
    comparison_report,
    empirical_theta,
    empirical_theta2,
    kl_marginal,
    theoretical_curve,
    theoretical_theta2,
)
from .engine import (
    ExtremalFunctionRecord,
    ModelSpec,
    ReplicateResult,
    Simulator,
    conditional_magnitude,
    conditional_profile,
    count_profile_statistics,
    naive_simulate,
    simulate_batch,
    simulate_replicate,
)
from .errors import (
    ConcavityViolation,
    ConfigError,
    DegenerateLevel,
    DomainError,
    InvalidInit,
    IterationCap,
    MaxIdError,
    MissingSamples,
    NonIntegrableEnvelope,
    NotPositiveDefinite,
    NumericalError,
    QuadratureFailure,
    TabulationRangeExceeded,
)
from .gaussian_fields import (
    CorrelationModel,
    FactorizedCovariance,
    SiteSet,
    bivariate_normal_cdf,
    conditional_mvn_given_site,
    correlation,
    factorize,
    grid_sites,
    order_sites,
)
from .marginal import MarginalLaw, marginal_law
from .measures import LocationMagnitudeMeasure, ScaleMagnitudeMeasure
from .samplers import LogConcaveTarget, MHConfig, ars_sample, find_mode, mh_sample, random_stream
