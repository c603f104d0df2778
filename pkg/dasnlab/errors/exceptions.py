"""
Custom exception classes for the laboratory.
"""


class LabException(Exception):
    """Base exception class for laboratory-specific errors."""

    exit_code = 1

    def __init__(self, message, exit_code=None, payload=None):
        super().__init__(message)
        self.message = message
        if exit_code is not None:
            self.exit_code = exit_code
        self.payload = payload

    def to_dict(self):
        rv = dict(self.payload or ())
        rv['error'] = self.__class__.__name__
        rv['message'] = self.message
        return rv


class ConfigurationError(LabException):
    """Raised when a run configuration or a model configuration is invalid."""

    def __init__(self, message, payload=None):
        super().__init__(message, exit_code=1, payload=payload)


class DataError(LabException):
    """Raised when a batch or dataset does not satisfy an operation's contract."""

    def __init__(self, message, payload=None):
        super().__init__(message, exit_code=1, payload=payload)


class LabelError(DataError):
    """Raised when a class label lies outside its label space."""


class RangeError(DataError):
    """Raised when a factor index is invalid for its domain."""


class DimensionError(LabException):
    """Raised when tensor extents do not line up."""

    def __init__(self, message, payload=None):
        super().__init__(message, exit_code=1, payload=payload)


class ArityError(LabException):
    """Raised when an operation receives too few elements."""

    def __init__(self, message, payload=None):
        super().__init__(message, exit_code=1, payload=payload)


class ContractError(LabException):
    """Raised when a caller breaks an operation's precondition."""

    def __init__(self, message, payload=None):
        super().__init__(message, exit_code=1, payload=payload)


class FormatError(LabException):
    """Raised when a parameter image does not match the target architecture."""

    def __init__(self, message, payload=None):
        super().__init__(message, exit_code=1, payload=payload)


class MetricError(LabException):
    """Raised when a metric is requested on a score set it is undefined for."""

    def __init__(self, message, payload=None):
        super().__init__(message, exit_code=1, payload=payload)


class NonFiniteError(LabException):
    """Raised when NaN or Inf appears at an op boundary."""

    def __init__(self, message, op=None, term=None):
        super().__init__(message, exit_code=3, payload={'op': op, 'term': term})
        self.op = op
        self.term = term


class DivergenceError(LabException):
    """Raised when a training iteration produces a non-finite loss."""

    def __init__(self, iteration, term, message=None):
        super().__init__(
            message or f"Training diverged at iteration {iteration} in term {term}",
            exit_code=3,
            payload={'iteration': iteration, 'term': term},
        )
        self.iteration = iteration
        self.term = term


class StorageError(LabException):
    """Raised when reading or writing a run artifact fails."""

    def __init__(self, message, payload=None):
        super().__init__(message, exit_code=2, payload=payload)
