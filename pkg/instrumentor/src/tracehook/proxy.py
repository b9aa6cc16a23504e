"""Attribute-intercepting proxies for eager state tracking.

Mutations that go through attribute assignment are visible to a proxy's
``__setattr__`` and emit a variable-state record the moment they happen. The
proxy stays behaviorally transparent: reads, calls, indexing, iteration, and
string forms all delegate to the wrapped object.
"""

from __future__ import annotations

from typing import Any

from .errors import UnsupportedObject
from .session import Instrumentation

_SLOTS = ("_th_target", "_th_session", "_th_token", "_th_attrs", "_th_var_type")


class TrackedObjectProxy:
    def __init__(self, target: Any, session: Instrumentation, token: str,
                 attrs: tuple[str, ...] | None = None):
        object.__setattr__(self, "_th_target", target)
        object.__setattr__(self, "_th_session", session)
        object.__setattr__(self, "_th_token", token)
        object.__setattr__(self, "_th_attrs", attrs)
        object.__setattr__(
            self, "_th_var_type",
            f"{type(target).__module__}.{type(target).__qualname__}",
        )

    @property
    def __wrapped__(self) -> Any:
        return object.__getattribute__(self, "_th_target")

    def __getattr__(self, name: str) -> Any:
        return getattr(object.__getattribute__(self, "_th_target"), name)

    def __setattr__(self, name: str, value: Any) -> None:
        target = object.__getattribute__(self, "_th_target")
        setattr(target, name, value)
        attrs = object.__getattribute__(self, "_th_attrs")
        if attrs is not None and name not in attrs:
            return
        session: Instrumentation = object.__getattribute__(self, "_th_session")
        session.emit_var_state(
            object.__getattribute__(self, "_th_var_type"),
            session.next_var_id(object.__getattribute__(self, "_th_token")),
            name,
            value,
        )

    def __delattr__(self, name: str) -> None:
        delattr(object.__getattribute__(self, "_th_target"), name)

    def __call__(self, *args, **kwargs):
        return object.__getattribute__(self, "_th_target")(*args, **kwargs)

    def __getitem__(self, key):
        return object.__getattribute__(self, "_th_target")[key]

    def __setitem__(self, key, value):
        object.__getattribute__(self, "_th_target")[key] = value

    def __len__(self):
        return len(object.__getattribute__(self, "_th_target"))

    def __iter__(self):
        return iter(object.__getattribute__(self, "_th_target"))

    def __repr__(self):
        return repr(object.__getattribute__(self, "_th_target"))

    def __eq__(self, other):
        return object.__getattribute__(self, "_th_target") == other

    def __hash__(self):
        return hash(object.__getattribute__(self, "_th_target"))


def wrap_tracked(
    session: Instrumentation,
    model_like: Any = None,
    optimizer_like: Any = None,
    eager: bool = False,
):
    """Track model/optimizer state.

    Eager mode returns attribute-intercepting proxies; sampling mode (the
    default) registers the objects for a state dump on every optimizer-step
    call instead, trading event timing for near-zero steady-state overhead.
    """
    out = []
    for token, obj in (("model", model_like), ("optimizer", optimizer_like)):
        if obj is None:
            out.append(None)
            continue
        if eager:
            out.append(TrackedObjectProxy(obj, session, token))
        else:
            if not (hasattr(obj, "named_parameters") or hasattr(obj, "param_groups")
                    or hasattr(obj, "__dict__")):
                raise UnsupportedObject(f"cannot track {type(obj).__qualname__}")
            session.track(obj, token)
            out.append(obj)
    return tuple(out)
