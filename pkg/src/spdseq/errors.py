"""Exception hierarchy shared by every module of the package."""


class SpdSeqError(Exception):
    """Base class for all errors raised by spdseq."""


class ConfigError(SpdSeqError, ValueError):
    """Invalid or inconsistent configuration."""


# linear algebra
class NotSpd(SpdSeqError, ValueError):
    pass


class DimensionMismatch(SpdSeqError, ValueError):
    pass


class EmptyInput(SpdSeqError, ValueError):
    pass


class NonConvergence(SpdSeqError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class Overflow(SpdSeqError, OverflowError):
    pass


class NotTriangularLength(SpdSeqError, ValueError):
    pass


# signal pipeline
class InvalidBand(SpdSeqError, ValueError):
    pass


class DegenerateSignal(SpdSeqError, ValueError):
    pass


class DegenerateSegment(SpdSeqError, ValueError):
    pass


class CorruptCache(SpdSeqError, ValueError):
    pass


class VersionMismatch(SpdSeqError, ValueError):
    pass


# autodiff / model
class ShapeMismatch(SpdSeqError, ValueError):
    pass


class NonScalarLoss(SpdSeqError, ValueError):
    pass


class StaleTape(SpdSeqError, RuntimeError):
    pass


class InvalidEps(SpdSeqError, ValueError):
    pass


class SequenceTooLong(SpdSeqError, ValueError):
    pass


class TDoesNotDivide210(ConfigError):
    pass


# harness
class RecordingTooShort(SpdSeqError, ValueError):
    pass


class MissingClass(SpdSeqError, ValueError):
    pass
