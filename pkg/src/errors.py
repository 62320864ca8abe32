"""Exception hierarchy for the SAN-M toolkit."""

from typing import Optional


class SanmError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(SanmError, ValueError):
    """Operand shapes do not agree."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        rendered = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class DegenerateMaskError(SanmError, ValueError):
    """A softmax row has no allowed entry."""


class ConfigurationError(SanmError, ValueError):
    """An architecture, training or task configuration is invalid."""


class NonFiniteError(SanmError, ArithmeticError):
    """A value that must be finite is NaN or infinite."""


class DivergenceError(NonFiniteError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, last_checkpoint: Optional[str] = None):
        self.step = step
        self.last_checkpoint = last_checkpoint
        where = last_checkpoint or "none written yet"
        super().__init__(f"loss became non-finite at step {step}; last good checkpoint: {where}")


class EmptyReferenceError(SanmError, ValueError):
    """CER is undefined for an empty reference."""


class CorpusFormatError(SanmError, ValueError):
    """A corpus file could not be parsed."""

    def __init__(self, message: str, offset: int, utterance_index: Optional[int] = None):
        self.offset = offset
        self.utterance_index = utterance_index
        location = f"byte {offset}"
        if utterance_index is not None:
            location = f"utterance {utterance_index}, {location}"
        super().__init__(f"{message} ({location})")


class HeaderError(CorpusFormatError):
    """Bad magic, version or count in the corpus header."""


class DimensionMismatchError(CorpusFormatError):
    """Feature width in the file differs from the expected width."""


class TruncatedPayloadError(CorpusFormatError):
    """The file ends before a declared payload does."""


class CheckpointFormatError(SanmError, ValueError):
    """A checkpoint file is malformed or does not match its config header."""


class DegenerateBatchError(SanmError, ValueError):
    """A batch has no non-padding target token."""
