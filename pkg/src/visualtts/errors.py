"""Exception hierarchy.

Everything raised on purpose derives from :class:`VisualTTSError`. Input
problems are :class:`ValidationError` (CLI exit code 1); numeric and runtime
failures are not (CLI exit code 2).
"""


class VisualTTSError(Exception):
    """Base class for all package errors."""


class ValidationError(VisualTTSError, ValueError):
    """Input failed a precondition check."""


class FormatError(ValidationError):
    """A TensorFile or manifest could not be decoded."""


class ShapeError(ValidationError):
    """An array has the wrong rank or dimensions."""


class EmptyInputError(ValidationError):
    """An input sequence is empty (after filtering)."""


class SpeakerLookupError(ValidationError, LookupError):
    """Speaker id outside the embedding table."""


class InsufficientLengthError(ValidationError):
    """Too few overlapping frames for a sliding-offset comparison."""


class ConfigError(ValidationError):
    """Invalid training or model configuration."""


class DataError(ValidationError):
    """A dataset record violates an invariant."""

    def __init__(self, utt_id, message):
        super().__init__(f"{utt_id}: {message}")
        self.utt_id = utt_id


class NumericError(VisualTTSError, ArithmeticError):
    """A non-finite value appeared during computation."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class StopContractError(VisualTTSError, RuntimeError):
    """Decoding was asked to run past the video-length limit."""
