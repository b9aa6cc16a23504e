"""Streams trace records through deployed invariants and reports violations.

A check fires as soon as a complete checkable unit exists: a closed API span
for span-shaped relations, or a synchronized per-step group for step-window
relations. The step-s group closes once every known process has moved past
step s, once the stream advances past step s+1 (straggler rule), or at end
of stream. Preconditions are evaluated first; a false precondition means no
check and no report.

Reports are deduplicated per (invariant, step, group); raw violating
occurrences are still tallied in the summary.
"""

from __future__ import annotations

import itertools
import json
import warnings
from pathlib import Path
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator

from .descriptors import APIDescriptor
from .errors import ExitWithoutEntry, IncompleteStreamWarning
from .events import APICallEvent, VarChangeEvent, var_key
from .inference import Invariant
from .records import RecordKind, TraceRecord
from .relations import (
    Example,
    RELATIONS,
    RecordView,
    api_record_view,
    var_record_view,
)

_STEPLESS = "__stepless__"


@dataclass
class ViolationReport:
    """One confirmed invariant violation with its trace context."""

    invariant_id: str
    relation: str
    invariant_text: str
    clause: dict
    step: Any
    detection_step: Any
    group_key: str
    meta: dict[str, Any]
    example: Example
    summary: str

    def to_wire(self) -> dict:
        return {
            "invariant": self.invariant_id,
            "relation": self.relation,
            "invariant_text": self.invariant_text,
            "clause": self.clause,
            "step": self.step,
            "detection_step": self.detection_step,
            "group": self.group_key,
            "meta": self.meta,
            "summary": self.summary,
            "records": [
                v.record.to_wire() for v in self.example.views if v.record is not None
            ],
        }


@dataclass
class CheckSummary:
    """Batch-mode accounting: per-invariant totals and first detections."""

    reports: int = 0
    checked_units: int = 0
    violations_by_invariant: dict[str, int] = field(default_factory=dict)
    occurrences_by_invariant: dict[str, int] = field(default_factory=dict)
    first_detection_step: dict[str, Any] = field(default_factory=dict)

    def to_wire(self) -> dict:
        return {
            "reports": self.reports,
            "checked_units": self.checked_units,
            "violations_by_invariant": dict(sorted(self.violations_by_invariant.items())),
            "occurrences_by_invariant": dict(sorted(self.occurrences_by_invariant.items())),
            "first_detection_step": dict(sorted(self.first_detection_step.items(), key=lambda kv: kv[0])),
        }


@dataclass
class SelectionManifest:
    """Exactly what must be instrumented to check a set of invariants."""

    apis: tuple[str, ...]
    variables: tuple[tuple[str, str], ...]
    meta_keys: tuple[str, ...]
    condition_fields: tuple[str, ...]

    def to_wire(self) -> dict:
        return {
            "schema": 1,
            "apis": list(self.apis),
            "variables": [list(v) for v in self.variables],
            "meta_keys": list(self.meta_keys),
            "condition_fields": list(self.condition_fields),
        }

    @staticmethod
    def from_wire(obj: dict) -> "SelectionManifest":
        return SelectionManifest(
            apis=tuple(obj["apis"]),
            variables=tuple((t, a) for t, a in obj["variables"]),
            meta_keys=tuple(obj["meta_keys"]),
            condition_fields=tuple(obj["condition_fields"]),
        )


def required_descriptors(invariants: Iterable[Invariant]) -> SelectionManifest:
    """The exact APIs, variables, meta keys, and fields these invariants need."""
    apis: set[str] = set()
    variables: set[tuple[str, str]] = set()
    meta_keys: set[str] = {"step"}
    condition_fields: set[str] = set()
    for inv in invariants:
        for d in inv.descriptors:
            if isinstance(d, APIDescriptor):
                apis.add(d.func_name)
            else:
                variables.add((d.var_type, d.attr_name))
        for cond in inv.precondition.all_conditions():
            f = cond.field_path
            if f.startswith("meta_vars."):
                meta_keys.add(f[len("meta_vars."):])
            elif not f.startswith("args."):
                condition_fields.add(f)
    return SelectionManifest(
        apis=tuple(sorted(apis)),
        variables=tuple(sorted(variables)),
        meta_keys=tuple(sorted(meta_keys)),
        condition_fields=tuple(sorted(condition_fields)),
    )


def _step_key(step: Any) -> Any:
    return _STEPLESS if step is None else step


class StreamChecker:
    """Incremental checking engine; feed records, collect reports."""

    def __init__(self, invariants: list[Invariant]):
        self.invariants = list(invariants)
        self.summary = CheckSummary()
        self._dedup: set[tuple[str, Any, str]] = set()

        self._consistent = [i for i in self.invariants if i.kind.name == "Consistent"]
        self._contain: dict[str, list[Invariant]] = {}
        self._output: dict[str, list[Invariant]] = {}
        self._sequence = [i for i in self.invariants if i.kind.name == "APISequence"]
        self._arg: dict[str, list[Invariant]] = {}
        for inv in self.invariants:
            if inv.kind.name == "EventContain":
                self._contain.setdefault(inv.descriptors[0].func_name, []).append(inv)
            elif inv.kind.name == "APIOutput":
                self._output.setdefault(inv.descriptors[0].func_name, []).append(inv)
            elif inv.kind.name == "APIArg":
                self._arg.setdefault(inv.descriptors[0].func_name, []).append(inv)

        self._sequence_funcs = {
            d.func_name for inv in self._sequence for d in inv.descriptors
        }
        manifest = required_descriptors(self.invariants)
        self._tracked_types = {t for t, _ in manifest.variables}
        self._tracked_attrs = {
            (t, a) for t, a in manifest.variables
        } | {(t, f) for t in self._tracked_types for f in manifest.condition_fields}

        # per (pid, tid): open span stack
        self._stacks: dict[tuple[int, int], list[APICallEvent]] = {}
        # per (pid, var_id, attr): last value, for change detection
        self._last_value: dict[tuple[int, str, str], Any] = {}
        # per step: (pid, var_id) -> attr -> record (latest within the step)
        self._step_vars: dict[Any, dict[tuple[int, str], dict[str, TraceRecord]]] = {}
        # per (step, func): entry records across processes
        self._step_calls: dict[tuple[Any, str], list[TraceRecord]] = {}
        # per (pid, tid, step): entry records of sequence-relevant APIs
        self._thread_windows: dict[tuple[int, int, Any], list[TraceRecord]] = {}

        self._pid_watermark: dict[int, Any] = {}
        self._global_max_step: Any = None
        self._closed_steps: set[Any] = set()

    # -- feeding ---------------------------------------------------------

    def feed(self, record: TraceRecord) -> Iterator[ViolationReport]:
        step = record.step
        pid = record.process_id
        prev = self._pid_watermark.get(pid)
        if isinstance(step, int):
            if not isinstance(prev, int) or step > prev:
                self._pid_watermark[pid] = step
            if not isinstance(self._global_max_step, int) or step > self._global_max_step:
                self._global_max_step = step

        if record.record_kind is RecordKind.FUNC_ENTRY:
            self._on_entry(record)
        elif record.record_kind is RecordKind.FUNC_EXIT:
            yield from self._on_exit(record)
        else:
            self._on_var(record)

        yield from self._close_ready_steps()

    def finish(self) -> Iterator[ViolationReport]:
        open_spans = sum(len(s) for s in self._stacks.values())
        if open_spans:
            warnings.warn(
                f"stream ended with {open_spans} open API span(s)",
                IncompleteStreamWarning,
            )
        for step in sorted(self._pending_steps(), key=_sortable_step):
            yield from self._close_step(step)

    def run(self, records: Iterable[TraceRecord]) -> Iterator[ViolationReport]:
        for r in records:
            yield from self.feed(r)
        yield from self.finish()

    # -- record handlers ---------------------------------------------------

    def _on_entry(self, record: TraceRecord) -> None:
        span = APICallEvent(record.func_name, record, None, complete=False)
        self._stacks.setdefault((record.process_id, record.thread_id), []).append(span)
        step = _step_key(record.step)
        if record.func_name in self._arg:
            self._step_calls.setdefault((step, record.func_name), []).append(record)
        if record.func_name in self._sequence_funcs:
            self._thread_windows.setdefault(
                (record.process_id, record.thread_id, step), []
            ).append(record)

    def _on_exit(self, record: TraceRecord) -> Iterator[ViolationReport]:
        key = (record.process_id, record.thread_id)
        stack = self._stacks.get(key) or []
        if not stack or stack[-1].func_name != record.func_name:
            raise ExitWithoutEntry(record)
        span = stack.pop()
        span.exit_record = record
        span.complete = True
        if stack:
            stack[-1].children.append(span)
        yield from self._check_span(span)

    def _on_var(self, record: TraceRecord) -> None:
        if (record.var_type, record.attr_name) not in self._tracked_attrs:
            return
        vkey = (record.process_id, record.var_id, record.attr_name)
        old = self._last_value.get(vkey)
        change = VarChangeEvent(
            var_type=record.var_type,
            var_id=record.var_id,
            attr_name=record.attr_name,
            old_value=old,
            new_value=record.attr_value,
            timestamp=record.timestamp,
            process_id=record.process_id,
            thread_id=record.thread_id,
            meta_vars=record.meta_vars,
            record=record,
        )
        self._last_value[vkey] = record.attr_value
        stack = self._stacks.get((record.process_id, record.thread_id))
        if stack:
            stack[-1].children.append(change)
        step = _step_key(record.step)
        inst = self._step_vars.setdefault(step, {}).setdefault(
            (record.process_id, record.var_id), {}
        )
        inst[record.attr_name] = record

    # -- unit closing --------------------------------------------------------

    def _pending_steps(self) -> set[Any]:
        steps = set(self._step_vars) | {s for s, _ in self._step_calls}
        steps |= {s for _, _, s in self._thread_windows}
        return steps - self._closed_steps

    def _close_ready_steps(self) -> Iterator[ViolationReport]:
        ready = []
        for step in self._pending_steps():
            if not isinstance(step, int):
                continue  # stepless window only closes at end of stream
            all_past = self._pid_watermark and all(
                isinstance(w, int) and w > step for w in self._pid_watermark.values()
            )
            straggler = isinstance(self._global_max_step, int) and self._global_max_step > step + 1
            if all_past or straggler:
                ready.append(step)
        for step in sorted(ready):
            yield from self._close_step(step)

    def _close_step(self, step: Any) -> Iterator[ViolationReport]:
        self._closed_steps.add(step)
        yield from self._check_consistent(step)
        yield from self._check_api_arg(step)
        yield from self._check_sequences(step)
        self._step_vars.pop(step, None)
        for k in [k for k in self._step_calls if k[0] == step]:
            self._step_calls.pop(k)
        for k in [k for k in self._thread_windows if k[2] == step]:
            self._thread_windows.pop(k)

    # -- per-relation checks ---------------------------------------------

    def _emit(self, inv: Invariant, example: Example, clause) -> Iterator[ViolationReport]:
        self.summary.occurrences_by_invariant[inv.id] = (
            self.summary.occurrences_by_invariant.get(inv.id, 0) + 1
        )
        dedup_key = (inv.id, example.step, example.group_key)
        if dedup_key in self._dedup:
            return
        self._dedup.add(dedup_key)
        detection = example.step
        if inv.id not in self.summary.first_detection_step:
            self.summary.first_detection_step[inv.id] = detection
        self.summary.violations_by_invariant[inv.id] = (
            self.summary.violations_by_invariant.get(inv.id, 0) + 1
        )
        self.summary.reports += 1
        meta = dict(example.views[0].record.meta_vars) if example.views and example.views[0].record else {}
        yield ViolationReport(
            invariant_id=inv.id,
            relation=inv.kind.name,
            invariant_text=inv.describe(),
            clause={"all": [c.to_wire() for c in clause.conditions]},
            step=example.step,
            detection_step=detection,
            group_key=example.group_key,
            meta=meta,
            example=example,
            summary=f"{inv.describe()} violated at step {example.step} ({example.group_key})",
        )

    def _check_example(self, inv: Invariant, example: Example) -> Iterator[ViolationReport]:
        self.summary.checked_units += 1
        clause = inv.precondition.satisfied_clause(example)
        if clause is None:
            return
        if not example.passing:
            yield from self._emit(inv, example, clause)

    def _check_span(self, span: APICallEvent) -> Iterator[ViolationReport]:
        template_contain = RELATIONS["EventContain"]
        for inv in self._contain.get(span.func_name, ()):
            view = api_record_view(span.entry_record)
            example = template_contain._example(
                inv.kind, inv.descriptors, (span,), (view,), span.step, span.func_name
            )
            yield from self._check_example(inv, example)
        template_output = RELATIONS["APIOutput"]
        for inv in self._output.get(span.func_name, ()):
            view = api_record_view(span.entry_record)
            example = template_output._example(
                inv.kind, inv.descriptors, (span,), (view,), span.step, span.func_name
            )
            yield from self._check_example(inv, example)

    def _check_consistent(self, step: Any) -> Iterator[ViolationReport]:
        instances = self._step_vars.get(step)
        if not instances:
            return
        template = RELATIONS["Consistent"]
        for inv in self._consistent:
            d1, d2 = inv.descriptors
            if d1 == d2:
                groups: dict[str, list[tuple[int, str]]] = {}
                for inst, recs in instances.items():
                    rec = recs.get(d1.attr_name)
                    if rec is not None and rec.var_type == d1.var_type:
                        groups.setdefault(var_key(inst[1]), []).append(inst)
                for suffix in sorted(groups):
                    for ia, ib in itertools.combinations(sorted(groups[suffix]), 2):
                        ra = instances[ia][d1.attr_name]
                        rb = instances[ib][d1.attr_name]
                        views = (
                            self._var_view(ra, step, ia),
                            self._var_view(rb, step, ib),
                        )
                        example = template._example(
                            inv.kind, inv.descriptors, (ra, rb), views, _none_step(step), suffix
                        )
                        yield from self._check_example(inv, example)
            else:
                for inst in sorted(instances):
                    recs = instances[inst]
                    r1, r2 = recs.get(d1.attr_name), recs.get(d2.attr_name)
                    if r1 is None or r2 is None or r1.var_type != d1.var_type:
                        continue
                    views = (self._var_view(r1, step, inst), self._var_view(r2, step, inst))
                    example = template._example(
                        inv.kind, inv.descriptors, (r1, r2), views, _none_step(step),
                        var_key(inst[1]),
                    )
                    yield from self._check_example(inv, example)

    def _var_view(self, record: TraceRecord, step: Any, inst: tuple[int, str]) -> RecordView:
        siblings = {
            attr: rec.attr_value
            for attr, rec in self._step_vars[step][inst].items()
        }
        return var_record_view(record, siblings)

    def _check_api_arg(self, step: Any) -> Iterator[ViolationReport]:
        template = RELATIONS["APIArg"]
        for (s, func), records in sorted(
            self._step_calls.items(), key=lambda kv: str(kv[0])
        ):
            if s != step:
                continue
            for inv in self._arg.get(func, ()):
                views = tuple(api_record_view(r) for r in records)
                example = template._example(
                    inv.kind, inv.descriptors, tuple(records), views, _none_step(step), func
                )
                yield from self._check_example(inv, example)

    def _check_sequences(self, step: Any) -> Iterator[ViolationReport]:
        template = RELATIONS["APISequence"]
        windows = sorted(
            (k for k in self._thread_windows if k[2] == step),
            key=lambda k: (k[0], k[1]),
        )
        for key in windows:
            records = self._thread_windows[key]
            for inv in self._sequence:
                listed = {d.func_name for d in inv.descriptors}
                firsts: list[TraceRecord] = []
                seen: set[str] = set()
                for r in records:
                    if r.func_name in listed and r.func_name not in seen:
                        seen.add(r.func_name)
                        firsts.append(r)
                if not firsts:
                    continue
                views = tuple(api_record_view(r) for r in firsts)
                # group key carries no thread id: one report per step even
                # when every worker misses the same call
                example = template._example(
                    inv.kind, inv.descriptors, tuple(firsts), views, _none_step(step),
                    "window",
                )
                yield from self._check_example(inv, example)


def _none_step(step: Any) -> Any:
    return None if step == _STEPLESS else step


def _sortable_step(step: Any):
    return (0, step) if isinstance(step, int) else (1, str(step))


def check_stream(
    invariants: list[Invariant],
    records: Iterable[TraceRecord],
    mode: str = "batch",
):
    """Check a record stream; online mode yields reports as they fire.

    Batch mode returns (reports, summary). Both modes produce the same
    multiset of reports for the same input.
    """
    checker = StreamChecker(invariants)
    if mode == "online":
        return checker.run(records)
    if mode != "batch":
        raise ValueError(f"unknown mode {mode!r}")
    reports = list(checker.run(records))
    return reports, checker.summary


def write_reports(reports: list[ViolationReport], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_wire(), sort_keys=True, separators=(",", ":")) + "\n")


def load_reports(path) -> list[dict]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out
