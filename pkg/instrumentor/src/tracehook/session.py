"""The instrumentation session: patching, state dumps, and record emission.

A session wraps selected callables with entry/exit logging, registers a
state-dump on optimizer-step calls (sampling mode), and filters everything
through an optional selection manifest so that only the APIs, variable
attributes, and meta keys the deployed invariants need are ever written.
"""

from __future__ import annotations

import functools
import importlib
import inspect
import os
import types
from pathlib import Path
from typing import Any, Callable, Iterable

from .emit import TraceWriter
from .errors import PatchCollision, TraceHookError
from .meta import MetaCollector
from .wire import digest_value, is_tensor_like, snapshot

# frequently-called internals that never carry training semantics
SKIP_MODULE_MARKERS = ("._", ".jit")

_CURRENT: "Instrumentation | None" = None


def current_session() -> "Instrumentation | None":
    return _CURRENT


def set_meta(key: str, value: Any) -> None:
    """Attach a meta variable (e.g. pipeline stage) to subsequent records."""
    if _CURRENT is not None:
        _CURRENT.meta.set_meta(key, value)


class Instrumentation:
    """One active instrumentation run writing one trace file per process."""

    def __init__(
        self,
        out_dir: str | Path | None = None,
        manifest: dict | None = None,
        sampling: bool = True,
        step_attr_names: tuple[str, ...] = ("step",),
    ):
        out = out_dir or os.environ.get("TRACEHOOK_OUT")
        if out is None:
            raise TraceHookError("no output directory: pass out_dir or set TRACEHOOK_OUT")
        self.out_dir = Path(out)
        self.manifest = manifest
        self.sampling = sampling
        self.step_attr_names = step_attr_names
        self.meta = MetaCollector()
        self.writer: TraceWriter | None = None
        self._patches: list[tuple[Any, str, Any]] = []
        self._tracked: list[tuple[str, Any]] = []
        self._var_counter = 0

        if manifest is None:
            self._sel_apis = None
            self._sel_attrs = None
            self._sel_meta = None
            self._condition_fields: tuple[str, ...] = ()
        else:
            self._sel_apis = set(manifest.get("apis", ()))
            self._sel_attrs = {tuple(v) for v in manifest.get("variables", ())}
            self._sel_meta = set(manifest.get("meta_keys", ()))
            self._condition_fields = tuple(manifest.get("condition_fields", ()))

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "Instrumentation":
        global _CURRENT
        self.writer = TraceWriter(self.out_dir)
        _CURRENT = self
        return self

    def stop(self) -> None:
        global _CURRENT
        self.unpatch()
        if self.writer is not None:
            self.writer.close()
        if _CURRENT is self:
            _CURRENT = None

    def __enter__(self) -> "Instrumentation":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    # -- filters --------------------------------------------------------------

    def _api_selected(self, api_name: str) -> bool:
        return self._sel_apis is None or api_name in self._sel_apis

    def _attr_selected(self, var_type: str, attr: str) -> bool:
        if self._sel_attrs is None:
            return True
        return (var_type, attr) in self._sel_attrs or attr in self._condition_fields

    def _filtered_meta(self) -> dict:
        meta = self.meta.collect(skip=3)
        if self._sel_meta is not None:
            meta = {k: v for k, v in meta.items() if k in self._sel_meta}
        return meta

    # -- record emission ---------------------------------------------------------

    def _emit_entry(self, api_name: str, args: tuple, kwargs: dict) -> None:
        if self.writer is None or not self._api_selected(api_name):
            return
        arg_snaps = [snapshot(a) for a in args]
        arg_snaps.extend(snapshot(v) for v in kwargs.values())
        self.writer.emit({
            "kind": "entry",
            "ts": self.writer.timestamp(),
            "pid": self.writer.pid,
            "tid": self.writer.thread_id(),
            "func": api_name,
            "args": arg_snaps,
            "meta": self._filtered_meta(),
        })

    def _emit_exit(self, api_name: str, result: Any, exc: BaseException | None) -> None:
        if self.writer is None or not self._api_selected(api_name):
            return
        obj = {
            "kind": "exit",
            "ts": self.writer.timestamp(),
            "pid": self.writer.pid,
            "tid": self.writer.thread_id(),
            "func": api_name,
            "ret": snapshot(result),
            "meta": self._filtered_meta(),
        }
        if exc is not None:
            obj["exc"] = type(exc).__name__
        self.writer.emit(obj)

    def emit_var_state(self, var_type: str, var_id: str, attr: str, value: Any) -> None:
        if self.writer is None or not self._attr_selected(var_type, attr):
            return
        snap = digest_value(value) if is_tensor_like(value) else snapshot(value)
        self.writer.emit({
            "kind": "var",
            "ts": self.writer.timestamp(),
            "pid": self.writer.pid,
            "tid": self.writer.thread_id(),
            "var_type": var_type,
            "var_id": var_id,
            "attr": attr,
            "value": snap,
            "meta": self._filtered_meta(),
        })

    # -- patching ------------------------------------------------------------------

    def patch_namespaces(
        self,
        modules: Iterable[str] = (),
        apis: Iterable[str] | None = None,
        callables: Iterable[str] = (),
    ) -> int:
        """Wrap public callables of the given modules, plus explicit targets.

        ``apis`` restricts namespace discovery to exact full names. Returns
        the number of callables wrapped. Low-level internal namespaces
        (private modules, JIT internals) are skipped.
        """
        api_filter = set(apis) if apis is not None else None
        count = 0
        for mod_name in modules:
            mod = importlib.import_module(mod_name)
            for owner, attr, api_name in _discover(mod, mod_name):
                if api_filter is not None and api_name not in api_filter:
                    continue
                self._patch_one(owner, attr, api_name)
                count += 1
        for spec in callables:
            owner, attr, api_name = _resolve_dotted(spec)
            self._patch_one(owner, attr, api_name)
            count += 1
        return count

    def _patch_one(self, owner: Any, attr: str, api_name: str) -> None:
        original = getattr(owner, attr)
        if getattr(original, "__tracehook_original__", None) is not None:
            raise PatchCollision(f"{api_name} is already instrumented")
        wrapper = self._make_wrapper(original, api_name)
        setattr(owner, attr, wrapper)
        self._patches.append((owner, attr, original))

    def unpatch(self) -> None:
        while self._patches:
            owner, attr, original = self._patches.pop()
            setattr(owner, attr, original)

    def _make_wrapper(self, func: Callable, api_name: str) -> Callable:
        dump_after = self.sampling and api_name.rsplit(".", 1)[-1] in self.step_attr_names

        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            self._emit_entry(api_name, args, kwargs)
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                self._emit_exit(api_name, None, e)
                raise
            if dump_after:
                self._dump_states(args[0] if args else None)
            self._emit_exit(api_name, result, None)
            return result

        wrapper.__tracehook_original__ = func
        return wrapper

    # -- state tracking --------------------------------------------------------------

    def track(self, obj: Any, name: str | None = None) -> str:
        """Register an object whose parameters are dumped on each step call."""
        token = name or f"obj{len(self._tracked)}"
        self._tracked.append((token, obj))
        return token

    def next_var_id(self, name: str) -> str:
        return f"{os.getpid()}:{name}"

    def _iter_params(self, obj: Any, token: str):
        """(var_id, parameter) pairs for optimizer- and model-shaped objects."""
        if obj is None:
            return
        if hasattr(obj, "param_groups"):  # optimizer-shaped
            i = 0
            for group in obj.param_groups:
                for p in group.get("params", ()):
                    yield self.next_var_id(f"param{i:03d}"), p
                    i += 1
        elif hasattr(obj, "named_parameters"):  # model-shaped
            for name, p in obj.named_parameters():
                yield self.next_var_id(f"{token}.{name}"), p

    def _dump_states(self, trigger: Any) -> None:
        sources = list(self._tracked)
        if trigger is not None and hasattr(trigger, "param_groups"):
            sources.append(("optimizer", trigger))
        seen: set[int] = set()
        for token, obj in sources:
            for var_id, param in self._iter_params(obj, token):
                if id(param) in seen:
                    continue
                seen.add(id(param))
                var_type = f"{type(param).__module__}.{type(param).__qualname__}"
                self.emit_var_state(var_type, var_id, "data", _param_data(param))
                for field in self._condition_fields:
                    if hasattr(param, field):
                        self.emit_var_state(var_type, var_id, field, getattr(param, field))


def _param_data(param: Any) -> Any:
    return param.data if hasattr(param, "data") else param


def _discover(mod: types.ModuleType, mod_name: str):
    """Public functions and class methods defined under a module."""
    for name, value in sorted(vars(mod).items()):
        if name.startswith("_"):
            continue
        if isinstance(value, types.FunctionType):
            owner_mod = getattr(value, "__module__", "") or ""
            if not owner_mod.startswith(mod_name) or _skipped(owner_mod):
                continue
            yield mod, name, f"{owner_mod}.{value.__qualname__}"
        elif inspect.isclass(value):
            cls_mod = getattr(value, "__module__", "") or ""
            if not cls_mod.startswith(mod_name) or _skipped(cls_mod):
                continue
            for m_name, member in sorted(vars(value).items()):
                if m_name.startswith("_") or not isinstance(member, types.FunctionType):
                    continue
                yield value, m_name, f"{cls_mod}.{value.__qualname__}.{m_name}"


def _skipped(module_path: str) -> bool:
    return any(marker in module_path for marker in SKIP_MODULE_MARKERS)


def _resolve_dotted(spec: str) -> tuple[Any, str, str]:
    """Resolve 'pkg.mod.Class.attr' or 'pkg.mod.func' to (owner, attr, name)."""
    parts = spec.split(".")
    for split in range(len(parts) - 1, 0, -1):
        mod_name = ".".join(parts[:split])
        try:
            obj: Any = importlib.import_module(mod_name)
        except ModuleNotFoundError:
            continue
        try:
            for piece in parts[split:-1]:
                obj = getattr(obj, piece)
            getattr(obj, parts[-1])
        except AttributeError:
            continue
        return obj, parts[-1], spec
    raise ModuleNotFoundError(f"cannot resolve callable {spec!r}")
