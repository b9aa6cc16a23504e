class TraceHookError(Exception):
    """Base class for instrumentation errors."""


class PatchCollision(TraceHookError):
    """A callable is already wrapped by an active instrumentation session."""


class UnsupportedObject(TraceHookError):
    """The object cannot be digested or tracked."""
