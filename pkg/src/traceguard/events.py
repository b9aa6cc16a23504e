"""High-level events reconstructed from raw trace records.

API call spans are paired per (process, thread) under stack discipline;
variable changes are paired chronologically per (process, variable,
attribute). Reconstruction only relies on within-thread order, so any
interleaving of complete per-thread streams produces the same events.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .errors import ExitWithoutEntry
from .records import RecordKind, TraceRecord, parse_trace
from .snapshots import ValueSnapshot


@dataclass
class VarChangeEvent:
    """Attribute state transition for one tracked variable instance."""

    var_type: str
    var_id: str
    attr_name: str
    old_value: ValueSnapshot | None
    new_value: ValueSnapshot
    timestamp: int
    process_id: int
    thread_id: int
    meta_vars: tuple[tuple[str, Any], ...]
    record: TraceRecord

    @property
    def changed(self) -> bool:
        """True when the value differs from the previous observation.

        A first observation counts as a change: the variable went from
        unobserved to a value.
        """
        return self.old_value is None or (
            self.old_value.comparable() != self.new_value.comparable()
        )

    @property
    def step(self) -> Any:
        return self.record.step


@dataclass
class APICallEvent:
    """A complete (or trailing incomplete) API invocation span."""

    func_name: str
    entry_record: TraceRecord
    exit_record: TraceRecord | None
    children: list["Event"] = field(default_factory=list)
    complete: bool = True

    @property
    def duration(self) -> int | None:
        if self.exit_record is None:
            return None
        return self.exit_record.timestamp - self.entry_record.timestamp

    @property
    def meta_vars(self) -> tuple[tuple[str, Any], ...]:
        return self.entry_record.meta_vars

    @property
    def process_id(self) -> int:
        return self.entry_record.process_id

    @property
    def thread_id(self) -> int:
        return self.entry_record.thread_id

    @property
    def timestamp(self) -> int:
        return self.entry_record.timestamp

    @property
    def step(self) -> Any:
        return self.entry_record.step

    @property
    def exception(self) -> str | None:
        return self.exit_record.exception if self.exit_record else None


Event = APICallEvent | VarChangeEvent


def var_key(var_id: str) -> str:
    """Alignment key for a variable across processes.

    Emitters may prefix var ids with a process-specific token separated by
    ':'; the suffix is the stable name used to align instances across ranks.
    """
    return var_id.rsplit(":", 1)[-1]


def reconstruct_events(records: Iterable[TraceRecord]) -> list[Event]:
    """Rebuild API spans and variable changes from raw records.

    Returns all top-level events ordered by (process, thread, time); nested
    API calls and variable changes appear as span children. Unmatched entries
    at stream end are kept as incomplete spans.
    """
    by_thread: dict[tuple[int, int], list[TraceRecord]] = {}
    for r in records:
        by_thread.setdefault((r.process_id, r.thread_id), []).append(r)

    events: list[Event] = []
    # last seen value per (pid, var_id, attr); var changes pair per process
    last_value: dict[tuple[int, str, str], ValueSnapshot] = {}

    for key in sorted(by_thread):
        pid, tid = key
        stack: list[APICallEvent] = []
        thread_events: list[Event] = []
        for r in by_thread[key]:
            if r.record_kind is RecordKind.FUNC_ENTRY:
                span = APICallEvent(r.func_name, r, None, complete=False)
                stack.append(span)
            elif r.record_kind is RecordKind.FUNC_EXIT:
                if not stack or stack[-1].func_name != r.func_name:
                    raise ExitWithoutEntry(r)
                span = stack.pop()
                span.exit_record = r
                span.complete = True
                if stack:
                    stack[-1].children.append(span)
                else:
                    thread_events.append(span)
            else:
                vkey = (pid, r.var_id, r.attr_name)
                change = VarChangeEvent(
                    var_type=r.var_type,
                    var_id=r.var_id,
                    attr_name=r.attr_name,
                    old_value=last_value.get(vkey),
                    new_value=r.attr_value,
                    timestamp=r.timestamp,
                    process_id=pid,
                    thread_id=tid,
                    meta_vars=r.meta_vars,
                    record=r,
                )
                last_value[vkey] = r.attr_value
                if stack:
                    stack[-1].children.append(change)
                else:
                    thread_events.append(change)
        # trailing unmatched entries stay flagged incomplete
        while stack:
            span = stack.pop()
            if stack:
                stack[-1].children.append(span)
            else:
                thread_events.append(span)
        events.extend(thread_events)
    return events


def iter_spans(events: Iterable[Event]):
    """All API spans in an event forest, including nested ones."""
    work = list(events)
    while work:
        ev = work.pop(0)
        if isinstance(ev, APICallEvent):
            yield ev
            work.extend(ev.children)


def iter_var_changes(events: Iterable[Event]):
    work = list(events)
    while work:
        ev = work.pop(0)
        if isinstance(ev, VarChangeEvent):
            yield ev
        else:
            work.extend(ev.children)


class TraceRun:
    """A parsed run: all records of one trace directory plus derived indexes."""

    def __init__(self, records: list[TraceRecord], run_id: str = "run"):
        self.run_id = run_id
        self.records = records
        self.events = reconstruct_events(records)
        self.spans = list(iter_spans(self.events))
        self.var_changes = list(iter_var_changes(self.events))
        self.process_ids = sorted({r.process_id for r in records})
        self.steps = sorted(
            {r.step for r in records if r.step is not None}, key=lambda s: (str(type(s)), s)
        )
        self.meta_keys = sorted({k for r in records for k, _ in r.meta_vars})

    @staticmethod
    def from_dir(path: str | Path, run_id: str | None = None) -> "TraceRun":
        """Load every trace_*.ndjson file of a run directory."""
        path = Path(path)
        files = sorted(path.glob("trace_*.ndjson"))
        if not files:
            raise FileNotFoundError(f"no trace_*.ndjson files under {path}")
        records: list[TraceRecord] = []
        for f in files:
            with f.open("r", encoding="utf-8") as fh:
                records.extend(parse_trace(fh))
        rid = run_id
        if rid is None:
            rid = _run_id_from_manifest(path) or path.name
        return TraceRun(records, run_id=rid)

    def span_count(self, func_name: str) -> int:
        return sum(1 for s in self.spans if s.func_name == func_name)

    def func_names(self) -> list[str]:
        return sorted({s.func_name for s in self.spans})

    def merged_records(self) -> list[TraceRecord]:
        """All records interleaved by timestamp, per-process order preserved.

        Sorting is stable, so records with equal timestamps keep file order;
        checking does not depend on cross-process order, this only makes
        report order reproducible.
        """
        return sorted(self.records, key=lambda r: r.timestamp)


def _run_id_from_manifest(path: Path) -> str | None:
    manifest = path / "run.json"
    if not manifest.exists():
        return None
    try:
        return json.loads(manifest.read_text()).get("run_id")
    except (json.JSONDecodeError, OSError):
        return None
