"""Exception hierarchy shared by all g2flow modules."""


class G2FlowError(Exception):
    """Base class for domain errors raised by this package."""


class RankOverflowError(G2FlowError):
    """Wedge product would exceed the top exterior degree (7)."""


class DegenerateFormError(G2FlowError):
    """A 3-form failed to induce a definite metric bilinear form."""


class MetricNotPositiveError(G2FlowError):
    """A metric field is not positive definite at some grid point."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class AsymmetricHError(G2FlowError):
    """The symmetric driver tensor h has a nonsymmetric part above tolerance."""


class StepFailureError(G2FlowError):
    """Time step rejected repeatedly; reported as a singularity candidate."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class InsufficientDynamicRangeError(G2FlowError):
    """Blow-up fit requested on a series that never grew enough to fit."""


class NotNormalizedError(G2FlowError):
    """Entropy probe violates the unit-mass constraint beyond tolerance."""


class NonConvergenceError(G2FlowError):
    """An iterative solve did not reach its tolerance within its budget."""


class TrajectoryGapError(G2FlowError):
    """Requested time lies outside the stored trajectory samples."""


class UnresolvableRadiusError(G2FlowError):
    """Ball radius below the resolvable scale of the grid."""


class NoAdmissibleBallsError(G2FlowError):
    """Every sampled ball violated the scalar-curvature admissibility bound."""


class ConfigError(G2FlowError):
    """Problem in a run-configuration file."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ParseError(ConfigError):
    pass


class UnknownKeyError(ConfigError):
    pass


class DuplicateKeyError(ConfigError):
    pass
