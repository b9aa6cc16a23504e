"""Exceptions and warnings shared across the package."""

from __future__ import annotations


class TraceGuardError(Exception):
    """Base class for all errors raised by this package."""


class MalformedRecord(TraceGuardError):
    """A trace line could not be decoded into a record."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class SchemaVersionMismatch(TraceGuardError):
    """A trace file or invariant file declares an unsupported schema version."""


class ExitWithoutEntry(TraceGuardError):
    """A FUNC_EXIT record has no matching FUNC_ENTRY on its thread's stack."""

    def __init__(self, record):
        super().__init__(
            f"exit for {record.func_name!r} at ts={record.timestamp} on "
            f"(pid={record.process_id}, tid={record.thread_id}) has no open entry"
        )
        self.record = record


class ArityMismatch(TraceGuardError):
    """An example group does not match the arity its relation requires."""


class EmptyExample(TraceGuardError):
    """Condition enumeration was asked to run on an example with no records."""


class InvalidConfig(TraceGuardError):
    """A generator run configuration is internally inconsistent."""


class UnsupportedObject(TraceGuardError):
    """An object cannot be digested or tracked."""


class EmptyTraceWarning(UserWarning):
    """A trace contributed no usable records to inference."""


class IncompleteStreamWarning(UserWarning):
    """The checked stream ended with open API spans or unclosed step windows."""
