"""Exception types shared across the codecs and stream operators."""


class RegimeCamError(Exception):
    """Base class for all package errors."""


class MalformedRow(RegimeCamError):
    def __init__(self, line_no, reason=""):
        self.line_no = line_no
        super().__init__(f"malformed row at line {line_no}" + (f": {reason}" if reason else ""))


class NonMonotonicTimestamp(RegimeCamError):
    def __init__(self, line_no):
        self.line_no = line_no
        super().__init__(f"timestamp decreases at line {line_no}")


class BadMagic(RegimeCamError):
    pass


class UnsupportedVersion(RegimeCamError):
    pass


class TruncatedRecord(RegimeCamError):
    pass


class CountMismatch(RegimeCamError):
    pass


class InvalidRoi(RegimeCamError):
    pass


class OutOfBounds(RegimeCamError):
    pass


class OutOfRange(RegimeCamError):
    def __init__(self, t):
        self.t = t
        super().__init__(f"timestamp {t} outside the covered frame interval")


class EmptySequence(RegimeCamError):
    pass


class ShapeMismatch(RegimeCamError):
    pass


class InvalidParams(RegimeCamError):
    pass


class NonPowerOfTwo(RegimeCamError):
    pass


class DimensionMismatch(RegimeCamError):
    pass


class InsufficientTraining(RegimeCamError):
    pass


class LengthMismatch(RegimeCamError):
    pass


class NonFiniteInput(RegimeCamError):
    pass


class EmptyDataset(RegimeCamError):
    pass


class SingleClass(RegimeCamError):
    pass


class InvalidDistribution(RegimeCamError):
    pass


class EmptyEvaluation(RegimeCamError):
    pass


class BadFrame(RegimeCamError):
    pass


class UnknownType(RegimeCamError):
    pass


class PrematureEnd(RegimeCamError):
    pass


class SourceError(RegimeCamError):
    pass


class SinkError(RegimeCamError):
    pass
