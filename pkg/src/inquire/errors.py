"""Exception hierarchy shared by every module."""

from __future__ import annotations


class InquireError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(InquireError, ValueError):
    """An argument is outside its valid domain."""


class DataError(InquireError, ValueError):
    """Input records are inconsistent or incomplete."""


class UndefinedCorrelationError(InquireError, ValueError):
    """A correlation was requested for a zero-variance input."""


class IngestionError(InquireError, ValueError):
    """An embedding matrix, manifest or query file failed validation."""


class ParseError(InquireError, ValueError):
    """Malformed structured-article XML.

    ``offset`` is the byte offset of the failure in the source, if known.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class EmptyArticleError(InquireError, ValueError):
    """The article has no body text."""


class GenerationError(InquireError):
    """The LLM endpoint returned an unusable response.

    The raw response text is kept on ``raw`` for debugging.
    """

    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw


class ValidationError(GenerationError):
    """A generated item violated its content rule."""


class TransportError(InquireError):
    """The endpoint could not be reached after all retries."""


class ScoringError(InquireError, ValueError):
    """No usable score tokens were found in a log-probability map."""


class ConfigError(InquireError):
    """Pipeline configuration is invalid or references missing files."""


class UnavailableDataError(InquireError):
    """A report lacks the records needed for the requested output."""


class StageError(InquireError):
    """A pipeline stage failed; wraps the underlying error with the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
