import logging

logger = logging.getLogger(__name__)


class EtsimException(Exception):
    """Base exception class for the energy-time simulator."""
    pass


class InputError(EtsimException):
    """Exception raised when invalid inputs are provided."""
    pass


class ValidationError(EtsimException):
    """Exception raised when a value violates one or more invariants.

    Parameters
    ----------
    errors : list of str
        Every violated invariant, in the order they were found.
    """
    def __init__(self, errors, prefix=None):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        message = '; '.join(self.errors)
        if prefix:
            message = '{0}: {1}'.format(prefix, message)
        super().__init__(message)


class TraceValidationError(ValidationError):
    """Exception raised when a trace bundle fails to parse or validate."""
    pass


class OracleError(EtsimException):
    """Exception raised when the brute-force optimum cannot be trusted."""
    pass


class NoConvergenceError(EtsimException):
    """Exception raised when no batch size reaches the target metric."""
    pass


class UnknownBatchSizeError(EtsimException):
    """Exception raised when a result arrives for something never issued."""
    pass
