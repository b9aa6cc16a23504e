"""tracehook: selective runtime instrumentation emitting traceguard traces.

Patches framework callables with entry/exit logging, tracks model/optimizer
state through proxies or per-step dumps, digests tensors instead of storing
them, and writes the schema-1 newline-delimited trace format.
"""

from .errors import PatchCollision, TraceHookError, UnsupportedObject
from .meta import MetaCollector
from .proxy import TrackedObjectProxy, wrap_tracked
from .session import Instrumentation, current_session, set_meta
from .wire import content_digest, digest_value, snapshot

__version__ = "0.1.0"
