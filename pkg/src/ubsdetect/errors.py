"""Exception types shared across pipeline stages."""


class UbsDetectError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(UbsDetectError):
    """Invalid, unknown, or inconsistent configuration."""


class MissingInput(UbsDetectError):
    """A stage input file or directory does not exist."""


class StageFailure(UbsDetectError):
    """A pipeline stage failed (wraps the underlying cause message)."""


# -- ingest ---------------------------------------------------------------

class UnknownSchema(UbsDetectError):
    """CSV header matches none of the known log file types."""


class ExcessiveMalformedRows(UbsDetectError):
    """More than the tolerated fraction of input rows were malformed."""


# -- ubs ------------------------------------------------------------------

class DimensionOverflow(UbsDetectError):
    """A session lands outside the configured [D, S] grid."""


class BadMagic(UbsDetectError):
    """Binary file does not start with the expected magic bytes."""


class TruncatedFile(UbsDetectError):
    """Binary file ended before the declared payload was complete."""


class DimMismatch(UbsDetectError):
    """File dimensions disagree with the dimensions the caller expects."""


# -- numcore / models -----------------------------------------------------

class ShapeMismatch(UbsDetectError):
    """Operands have incompatible shapes."""


class NonFiniteInput(UbsDetectError):
    """An operation received NaN or infinite values."""


class NonFiniteLoss(UbsDetectError):
    """Training produced a NaN or infinite loss."""


# -- detectors ------------------------------------------------------------

class UnknownMethod(UbsDetectError):
    """Requested detector method is not one of ocsvm/lof/iforest."""


# -- eval -----------------------------------------------------------------

class InsufficientUsers(UbsDetectError):
    """A test-set stratum asks for more users than the pool can supply."""
