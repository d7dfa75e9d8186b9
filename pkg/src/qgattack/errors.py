"""Exception hierarchy shared across the package."""


class QGAttackError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(QGAttackError, ValueError):
    """Array dimensions do not match what the operation expects."""


class DomainError(QGAttackError, ValueError):
    """An argument lies outside the domain of the operation (bad label, empty batch, ...)."""


class DegenerateGradientError(QGAttackError, ArithmeticError):
    """The gradient has no nonzero component, so a normalizer would be zero."""


class CheckpointError(QGAttackError):
    """A model checkpoint is unreadable or incompatible."""


class TrainingDivergedError(QGAttackError, FloatingPointError):
    """Training produced a non-finite loss."""


class IdxError(QGAttackError, ValueError):
    """Base class for IDX parse failures."""


class IdxMagicError(IdxError):
    """The magic number does not describe the expected IDX file kind."""


class IdxTruncatedError(IdxError):
    """The header or payload is shorter than the header promises."""


class IdxCountMismatchError(IdxError):
    """Image and label files disagree on the number of items."""


class IdxTrailingDataError(IdxError):
    """The file carries bytes beyond the declared payload."""


class ConfigError(QGAttackError, ValueError):
    """A run configuration is malformed or references invalid values."""
