"""Exception hierarchy shared across the package."""


class USleepError(Exception):
    """Base class for all package errors."""


class ContractError(USleepError, ValueError):
    """An operation was called with arguments that violate its contract."""


class ParseError(USleepError, ValueError):
    """A file could not be parsed.

    ``offset`` is a byte offset (binary formats) and ``line`` a 1-based line
    number (text formats); whichever applies is set.
    """

    def __init__(self, message, offset=None, line=None):
        where = ""
        if offset is not None:
            where = f" (byte offset {offset})"
        elif line is not None:
            where = f" (line {line})"
        super().__init__(message + where)
        self.offset = offset
        self.line = line


class IneligibleRecordingError(USleepError):
    """The recording cannot be used (missing modalities, empty hypnogram, ...)."""


class NonFiniteGradientError(USleepError, FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


class CheckpointError(USleepError):
    """A checkpoint is truncated or does not match the expected layout."""


class ConfigError(USleepError, ValueError):
    """Inconsistent run configuration."""


class SamplingError(USleepError):
    """No scorable recording could be drawn within the retry budget."""
