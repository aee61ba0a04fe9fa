"""Exception types raised by vbdiar.

Every error derives from :class:`DiarizationError` so callers (and the CLI)
can separate data problems from programming errors with one ``except``.
"""


class DiarizationError(ValueError):
    """Base class for all data errors."""


class FormatError(DiarizationError):
    """A file does not follow its declared format (bad magic, header, line)."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionMismatchError(DiarizationError):
    pass


class CountMismatchError(DiarizationError):
    pass


class NonFiniteError(DiarizationError):
    pass


class InvalidSegmentError(DiarizationError):
    pass


class SingleClassError(DiarizationError):
    """Training data contains one speaker (PLDA) or one class (overlap)."""


class RankDeficientError(DiarizationError):
    pass


class NotPositiveDefiniteError(DiarizationError):
    pass


class TimelineMismatchError(DiarizationError):
    pass


class EmptyReferenceError(DiarizationError):
    pass


class StageError(DiarizationError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
