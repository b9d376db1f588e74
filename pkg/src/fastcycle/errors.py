"""Exception hierarchy for the fastcycle package."""

from __future__ import annotations


class FastCycleError(Exception):
    """Base class for all fastcycle errors."""


# --- topic registry / publish path ---


class InvalidTopicName(FastCycleError):
    """Topic name is empty, exceeds 255 UTF-8 bytes, or contains a NUL byte."""


class InvalidCapacity(FastCycleError):
    """Queue capacity must be a positive integer (or None for unbounded)."""


# --- broker lifecycle ---


class InvalidConfig(FastCycleError):
    """A configuration value is out of its allowed range."""


class AlreadyStarted(FastCycleError):
    """start() called on a broker that is already running or was stopped."""


class NotRunning(FastCycleError):
    """The broker (or a component) is not in a running state."""


class DrainTimeout(FastCycleError):
    """Draining did not complete within the shutdown timeout.

    ``remaining`` is the number of queued deliveries that were discarded;
    ``stats`` is the final broker statistics snapshot.
    """

    def __init__(self, remaining: int, stats=None):
        super().__init__(f"drain timed out with {remaining} deliveries still queued")
        self.remaining = remaining
        self.stats = stats


# --- manifest / parameters ---


class ParseError(FastCycleError):
    """Manifest document is malformed. Carries position info when available."""

    def __init__(self, message: str, *, line: int | None = None,
                 col: int | None = None, path: str | None = None):
        loc = ""
        if line is not None:
            loc = f" at line {line}" + (f" column {col}" if col is not None else "")
        elif path is not None:
            loc = f" at {path}"
        super().__init__(message + loc)
        self.line = line
        self.col = col
        self.path = path


class UnknownManifestKey(ParseError):
    """Strict-mode manifest loading rejected an unrecognized key."""


class DuplicateComponentName(FastCycleError):
    """Two manifest entries share the same component name."""


class MissingField(FastCycleError):
    """A required manifest field is absent."""


class MissingParam(FastCycleError):
    """Parameter absent and no default was supplied."""


class TypeMismatch(FastCycleError):
    """Parameter present but its type does not match the expectation."""


class InitFailed(FastCycleError):
    """Component construction or init() raised; the component is quarantined."""

    def __init__(self, name: str, cause: BaseException):
        super().__init__(f"component {name!r} failed to initialize: {cause!r}")
        self.component_name = name
        self.cause = cause


class UnknownComponent(FastCycleError):
    """No factory is registered for the named component."""


class InvalidPeriod(FastCycleError):
    """Serve timer period must be strictly positive."""


# --- binary log ---


class LogFormatError(FastCycleError):
    """Base class for log decode errors. ``offset`` is the byte position of the
    failing record when decoding a stream."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadMagic(LogFormatError):
    """Record does not start with the expected magic bytes."""


class UnsupportedVersion(LogFormatError):
    """Record version byte is not supported."""


class Truncated(LogFormatError):
    """Input ends before the declared record length."""


class EmptyAllowlist(FastCycleError):
    """An allowlist topic filter needs at least one topic."""


# --- benchmarking ---


class TooFewSamples(FastCycleError):
    """Statistics need at least two samples."""


class LostSamplesWarning(UserWarning):
    """Some benchmark samples were lost (queue drops or echo timeouts)."""
