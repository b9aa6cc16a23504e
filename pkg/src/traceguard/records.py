"""Trace records and the newline-delimited wire format.

A trace file is UTF-8 text: a header line ``{"kind":"header","schema":1}``
followed by one JSON object per record. Field names on the wire are exactly
``kind, ts, pid, tid, func, args, ret, exc, var_type, var_id, attr, value,
meta``; absent fields are omitted. Lines are serialized with sorted keys and
no whitespace, which makes serialize(parse(f)) byte-identical to f for any
file this package writes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Any, Iterable, Iterator

from .errors import MalformedRecord, SchemaVersionMismatch
from .snapshots import ValueSnapshot

SCHEMA_VERSION = 1

_WIRE_KINDS = {"entry", "exit", "var"}


class RecordKind(str, Enum):
    FUNC_ENTRY = "entry"
    FUNC_EXIT = "exit"
    VAR_STATE = "var"


@dataclass(frozen=True)
class TraceRecord:
    """One timestamped observation: an API entry/exit or a variable state."""

    record_kind: RecordKind
    timestamp: int
    process_id: int
    thread_id: int
    func_name: str | None = None
    args: tuple[ValueSnapshot, ...] | None = None
    return_value: ValueSnapshot | None = None
    exception: str | None = None
    var_type: str | None = None
    var_id: str | None = None
    attr_name: str | None = None
    attr_value: ValueSnapshot | None = None
    meta_vars: tuple[tuple[str, Any], ...] = field(default=())

    @property
    def meta(self) -> dict[str, Any]:
        return dict(self.meta_vars)

    @property
    def step(self) -> Any:
        """The training-iteration index, or None when the record has none."""
        for k, v in self.meta_vars:
            if k == "step":
                return v
        return None

    def to_wire(self) -> dict:
        obj: dict[str, Any] = {
            "kind": self.record_kind.value,
            "ts": self.timestamp,
            "pid": self.process_id,
            "tid": self.thread_id,
            "meta": dict(self.meta_vars),
        }
        if self.record_kind is RecordKind.FUNC_ENTRY:
            obj["func"] = self.func_name
            obj["args"] = [a.to_wire() for a in self.args or ()]
        elif self.record_kind is RecordKind.FUNC_EXIT:
            obj["func"] = self.func_name
            obj["ret"] = (self.return_value or ValueSnapshot.from_wire({"k": "none"})).to_wire()
            if self.exception is not None:
                obj["exc"] = self.exception
        else:
            obj["var_type"] = self.var_type
            obj["var_id"] = self.var_id
            obj["attr"] = self.attr_name
            obj["value"] = self.attr_value.to_wire() if self.attr_value else None
        return obj

    @staticmethod
    def from_wire(obj: dict) -> "TraceRecord":
        kind = obj.get("kind")
        if kind not in _WIRE_KINDS:
            raise ValueError(f"unknown record kind {kind!r}")
        common = dict(
            record_kind=RecordKind(kind),
            timestamp=int(obj["ts"]),
            process_id=int(obj["pid"]),
            thread_id=int(obj["tid"]),
            meta_vars=tuple(sorted(obj.get("meta", {}).items())),
        )
        if kind == "entry":
            return TraceRecord(
                func_name=obj["func"],
                args=tuple(ValueSnapshot.from_wire(a) for a in obj.get("args", [])),
                **common,
            )
        if kind == "exit":
            return TraceRecord(
                func_name=obj["func"],
                return_value=ValueSnapshot.from_wire(obj["ret"]) if "ret" in obj else None,
                exception=obj.get("exc"),
                **common,
            )
        return TraceRecord(
            var_type=obj["var_type"],
            var_id=obj["var_id"],
            attr_name=obj["attr"],
            attr_value=ValueSnapshot.from_wire(obj["value"]),
            **common,
        )


def entry_record(ts, pid, tid, func, args=(), meta=None) -> TraceRecord:
    return TraceRecord(
        RecordKind.FUNC_ENTRY, ts, pid, tid, func_name=func,
        args=tuple(args), meta_vars=tuple(sorted((meta or {}).items())),
    )


def exit_record(ts, pid, tid, func, ret=None, exc=None, meta=None) -> TraceRecord:
    from .snapshots import none_value

    return TraceRecord(
        RecordKind.FUNC_EXIT, ts, pid, tid, func_name=func,
        return_value=ret if ret is not None else none_value(), exception=exc,
        meta_vars=tuple(sorted((meta or {}).items())),
    )


def var_state_record(ts, pid, tid, var_type, var_id, attr, value, meta=None) -> TraceRecord:
    return TraceRecord(
        RecordKind.VAR_STATE, ts, pid, tid, var_type=var_type, var_id=var_id,
        attr_name=attr, attr_value=value, meta_vars=tuple(sorted((meta or {}).items())),
    )


def encode_line(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def header_line(schema: int = SCHEMA_VERSION) -> str:
    return encode_line({"kind": "header", "schema": schema})


def parse_trace(stream: IO[bytes] | IO[str] | Iterable[str]) -> list[TraceRecord]:
    """Parse a newline-delimited trace stream into records, in file order.

    The first non-empty line must be the schema header. Malformed lines raise
    MalformedRecord with their 1-based line number.
    """
    records: list[TraceRecord] = []
    saw_header = False
    for line_no, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedRecord(line_no, f"invalid JSON: {e.msg}") from e
        if not isinstance(obj, dict):
            raise MalformedRecord(line_no, "record is not an object")
        if not saw_header:
            if obj.get("kind") != "header":
                raise MalformedRecord(line_no, "missing schema header line")
            if obj.get("schema") != SCHEMA_VERSION:
                raise SchemaVersionMismatch(
                    f"trace schema {obj.get('schema')!r} is not supported "
                    f"(expected {SCHEMA_VERSION})"
                )
            saw_header = True
            continue
        if obj.get("kind") == "header":
            raise MalformedRecord(line_no, "duplicate header line")
        try:
            records.append(TraceRecord.from_wire(obj))
        except (KeyError, ValueError, TypeError) as e:
            raise MalformedRecord(line_no, str(e)) from e
    return records


def serialize_trace(records: Iterable[TraceRecord]) -> str:
    """Render records back to the canonical wire text, header included."""
    lines = [header_line()]
    lines.extend(encode_line(r.to_wire()) for r in records)
    return "\n".join(lines) + "\n"


def iter_trace_lines(records: Iterable[TraceRecord]) -> Iterator[str]:
    yield header_line()
    for r in records:
        yield encode_line(r.to_wire())
