"""Exception types raised across the package."""


class TSAError(Exception):
    """Base class for every error raised by this package."""


class DataError(TSAError):
    """Input data is malformed or violates a record invariant."""


class ParseError(DataError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class InvariantViolation(DataError):
    def __init__(self, line, field, message=""):
        self.line = line
        self.field = field
        self.detail = message
        detail = f": {message}" if message else ""
        super().__init__(f"line {line}: invalid field {field!r}{detail}")


class SpanLost(DataError):
    """The target span did not survive preprocessing."""


class DegenerateSplit(DataError):
    pass


class SizeTooSmall(TSAError):
    pass


class TargetTooLong(TSAError):
    pass


class ShapeMismatch(TSAError):
    pass


class RangeOutOfBounds(TSAError):
    pass


class InvalidClass(TSAError):
    pass


class NotScalar(TSAError):
    pass


class IdOutOfRange(TSAError):
    pass


class NotMarked(TSAError):
    pass


class EmptyClass(TSAError):
    pass


class NonFiniteLoss(TSAError):
    pass


class CorruptCheckpoint(TSAError):
    pass


class VersionMismatch(TSAError):
    pass


class LengthMismatch(TSAError):
    pass


class EmptyMatrix(TSAError):
    pass


class ConfigError(TSAError):
    """A configuration file or value is invalid."""
