"""Exception hierarchy shared by every module.

The CLI maps these onto stable exit codes, so new error types should
subclass one of the three families below.
"""


class TRevisionError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TRevisionError, ValueError):
    """Invalid experiment configuration."""


class DataError(TRevisionError):
    """Problem with input data (shapes, labels, file formats)."""


class ShapeError(DataError, ValueError):
    pass


class DomainError(DataError, ValueError):
    """An argument lies outside the domain of the operation."""


class PreconditionError(DataError, ValueError):
    pass


class DataFormatError(DataError):
    """A file could not be parsed.

    ``offset`` is a byte offset for binary formats and ``line`` a 1-based
    line number for text formats; at most one of them is set.
    """

    def __init__(self, message, *, path=None, offset=None, line=None):
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte {offset}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{': '.join([', '.join(where), message])}"
        super().__init__(message)
        self.path = path
        self.offset = offset
        self.line = line


class AggregationError(DataError):
    def __init__(self, message, offenders=()):
        self.offenders = list(offenders)
        if self.offenders:
            message = f"{message}: {', '.join(str(o) for o in self.offenders)}"
        super().__init__(message)


class NumericError(TRevisionError, ArithmeticError):
    """Non-finite values or a degenerate quantity during computation."""


class SingularMatrixError(NumericError):
    def __init__(self, condition):
        super().__init__(f"matrix is singular or ill-conditioned (condition estimate {condition:.3e})")
        self.condition = condition
