"""Numerical laboratory for flows of G2 structures on flat periodic domains."""

from .algebra import (
    DIM,
    InducedMetric,
    basis_form,
    basis_vector,
    component,
    flat_star,
    g2_check,
    hodge_star,
    induced_metric,
    interior,
    metric_bilinear,
    standard_phi,
    standard_psi,
    wedge,
)
from .errors import (
    AsymmetricHError,
    ConfigError,
    DegenerateFormError,
    DuplicateKeyError,
    G2FlowError,
    InsufficientDynamicRangeError,
    MetricNotPositiveError,
    NoAdmissibleBallsError,
    NonConvergenceError,
    NotNormalizedError,
    ParseError,
    RankOverflowError,
    StepFailureError,
    TrajectoryGapError,
    UnknownKeyError,
    UnresolvableRadiusError,
)

__all__ = [
    "DIM",
    "InducedMetric",
    "basis_form",
    "basis_vector",
    "component",
    "flat_star",
    "g2_check",
    "hodge_star",
    "induced_metric",
    "interior",
    "metric_bilinear",
    "standard_phi",
    "standard_psi",
    "wedge",
    "AsymmetricHError",
    "ConfigError",
    "DegenerateFormError",
    "DuplicateKeyError",
    "G2FlowError",
    "InsufficientDynamicRangeError",
    "MetricNotPositiveError",
    "NoAdmissibleBallsError",
    "NonConvergenceError",
    "NotNormalizedError",
    "ParseError",
    "RankOverflowError",
    "StepFailureError",
    "TrajectoryGapError",
    "UnknownKeyError",
    "UnresolvableRadiusError",
]
