"""Exception types shared across the package.

Each class carries the CLI exit code under which it surfaces, so the
command-line layer can translate failures without an isinstance ladder:
2 = bad input/configuration, 3 = numerical domain/singularity problem,
4 = a statistical or structural self-check failed.
"""


class PermitSimError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(PermitSimError):
    """Scenario or parameter input rejected during validation."""

    exit_code = 2


class UnsupportedInputError(ConfigError):
    """Input is well-formed but outside what this routine supports."""


class UnsupportedConfigurationError(ConfigError):
    """Scenario shape not covered by the requested closed forms
    (e.g. heterogeneous flexibility where homogeneity is required)."""


class DomainError(PermitSimError):
    """Argument outside the mathematical domain (e.g. time beyond the horizon)."""

    exit_code = 3


class SingularityError(PermitSimError):
    """A coefficient denominator lost strict positivity."""

    exit_code = 3


class InfeasibleObservationError(PermitSimError):
    """An observed statistic lies outside the range the model can produce."""

    exit_code = 3


class DiagnosticError(PermitSimError):
    """A structural or statistical self-check failed; results untrustworthy."""

    exit_code = 4


class ClearingError(DiagnosticError):
    """Market clearing residual exceeded tolerance (should be exact algebra)."""


class NonMartingalePriceError(DiagnosticError):
    """Price path failed the martingale drift diagnostic where one is required."""
