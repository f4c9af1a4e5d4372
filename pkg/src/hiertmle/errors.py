"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: configuration problems exit with 2,
data problems with 3 and estimation failures with 4.
"""


class HierTmleError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(HierTmleError, ValueError):
    """Invalid user configuration (learner names, fold counts, config files)."""

    exit_code = 2


class DataError(HierTmleError, ValueError):
    """Input data violates a structural or domain invariant."""

    exit_code = 3


class SchemaError(DataError):
    """Column roles are missing, unknown, or inconsistent within a cluster."""


class DomainError(DataError):
    """A value lies outside its admissible range."""


class EstimationError(HierTmleError, RuntimeError):
    """A numerical estimation step failed."""

    exit_code = 4


class RankDeficiencyError(EstimationError):
    """The design matrix is singular or numerically ill-conditioned."""


class PositivityError(EstimationError):
    """A propensity score is zero (or one) where it must be inverted."""


class TargetingError(EstimationError):
    """The fluctuation step did not solve its score equation."""
