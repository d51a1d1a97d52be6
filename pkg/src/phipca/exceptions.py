"""Exception hierarchy shared across the package.

Each class carries an ``exit_code`` so the command-line front end can map
failures onto its documented return codes.
"""


class PhiPCAError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ParameterError(PhiPCAError, ValueError):
    """An argument is outside its admissible range."""

    exit_code = 4


class ValidationError(PhiPCAError, ValueError):
    """An input array violates a structural precondition."""

    exit_code = 3


class DomainError(PhiPCAError, ValueError):
    """A matrix function was evaluated outside the domain of its scalar map."""

    exit_code = 3


class DegeneracyError(PhiPCAError, ValueError):
    """Eigenvalues are too close for a gap-dependent quantity to be defined."""

    exit_code = 3


class ConvergenceError(PhiPCAError, RuntimeError):
    """The dense eigensolver failed to converge."""

    exit_code = 3


class InsufficientDataError(PhiPCAError, ValueError):
    """A block holds too few samples to form a covariance matrix."""

    exit_code = 3


class ParseError(PhiPCAError, ValueError):
    """A data file could not be decoded."""

    exit_code = 2

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(PhiPCAError, ValueError):
    """A run configuration is missing or inconsistent."""

    exit_code = 4
