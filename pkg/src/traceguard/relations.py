"""Relation templates and their deterministic check semantics.

Five built-in relations are provided; each one knows how to seed hypotheses
from a trace, how to collect passing/failing examples for a hypothesis, and
how to evaluate one example. New relations plug in through ``register``.

An Example is the unit every stage shares: the group of records or events one
check examined together, flattened field views of those records (consumed by
precondition deduction), and the verdict.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, ClassVar, Iterator

from .descriptors import (
    APIDescriptor,
    Descriptor,
    ValuePattern,
    VariableDescriptor,
    match_descriptor,
)
from .errors import ArityMismatch
from .events import APICallEvent, TraceRun, var_key
from .records import RecordKind, TraceRecord
from .snapshots import ValueSnapshot


class Verdict(str, Enum):
    PASSING = "passing"
    FAILING = "failing"


class BoundType(str, Enum):
    EQUALS_INPUT_ATTR = "equals_input_attr"
    CONSTANT_ATTR = "constant_attr"


@dataclass(frozen=True)
class RelationKind:
    """A relation template name plus its relation-specific parameters."""

    name: str
    is_distinct: bool | None = None  # APIArg
    arg_index: int | None = None  # APIArg: designated argument slot
    bound_type: BoundType | None = None  # APIOutput
    bound_attr: str | None = None  # APIOutput: snapshot attribute (shape/dtype)
    input_index: int | None = None  # APIOutput EQUALS_INPUT_ATTR
    constant: Any = None  # APIOutput CONSTANT_ATTR expected value

    def params_wire(self) -> dict:
        out: dict[str, Any] = {}
        if self.is_distinct is not None:
            out["is_distinct"] = self.is_distinct
        if self.arg_index is not None:
            out["arg_index"] = self.arg_index
        if self.bound_type is not None:
            out["bound_type"] = self.bound_type.value
        if self.bound_attr is not None:
            out["bound_attr"] = self.bound_attr
        if self.input_index is not None:
            out["input_index"] = self.input_index
        if self.constant is not None:
            out["constant"] = list(self.constant) if isinstance(self.constant, tuple) else self.constant
        return out

    @staticmethod
    def from_wire(name: str, params: dict) -> "RelationKind":
        constant = params.get("constant")
        if isinstance(constant, list):
            constant = tuple(constant)
        return RelationKind(
            name=name,
            is_distinct=params.get("is_distinct"),
            arg_index=params.get("arg_index"),
            bound_type=BoundType(params["bound_type"]) if "bound_type" in params else None,
            bound_attr=params.get("bound_attr"),
            input_index=params.get("input_index"),
            constant=constant,
        )


@dataclass(frozen=True)
class RecordView:
    """Flat field map of one record as precondition deduction sees it.

    Keys are ``meta_vars.<name>`` for meta variables, sibling attribute names
    for variable records, and ``args.<i>`` for API arguments. Digest-valued
    fields are tracked so value-pinning conditions are never built on them.
    """

    fields: tuple[tuple[str, Any], ...]
    digest_fields: frozenset[str]
    record: TraceRecord | None = None

    def as_dict(self) -> dict[str, Any]:
        return dict(self.fields)

    @staticmethod
    def make(fields: dict[str, Any], digest_fields: set[str] | frozenset[str] = frozenset(),
             record: TraceRecord | None = None) -> "RecordView":
        return RecordView(tuple(sorted(fields.items(), key=lambda kv: kv[0])),
                          frozenset(digest_fields), record)


@dataclass
class Example:
    """One group of entities a relation examined together, with its verdict."""

    kind: RelationKind
    descriptors: tuple[Descriptor, ...]
    entities: tuple[Any, ...]
    views: tuple[RecordView, ...]
    verdict: Verdict
    step: Any = None
    group_key: str = ""

    @property
    def passing(self) -> bool:
        return self.verdict is Verdict.PASSING


def meta_fields(meta_vars: tuple[tuple[str, Any], ...]) -> dict[str, Any]:
    return {f"meta_vars.{k}": v for k, v in meta_vars}


def var_record_view(record: TraceRecord, siblings: dict[str, ValueSnapshot]) -> RecordView:
    fields = meta_fields(record.meta_vars)
    digests: set[str] = set()
    for attr, snap in siblings.items():
        fields[attr] = snap.comparable()
        if snap.is_digest():
            digests.add(attr)
    return RecordView.make(fields, digests, record)


def api_record_view(record: TraceRecord) -> RecordView:
    fields = meta_fields(record.meta_vars)
    digests: set[str] = set()
    for i, arg in enumerate(record.args or ()):
        path = f"args.{i}"
        fields[path] = arg.comparable()
        if arg.is_digest():
            digests.add(path)
    return RecordView.make(fields, digests, record)


def snapshot_attr(snap: ValueSnapshot | None, attr: str) -> Any:
    if snap is None:
        return None
    if attr == "shape":
        return tuple(snap.shape) if snap.shape is not None else None
    if attr == "dtype":
        return snap.dtype
    return None


# ---------------------------------------------------------------------------
# Run indexing shared by hypothesis generation and example collection
# ---------------------------------------------------------------------------

def blocklisted(func_name: str, patterns: tuple[str, ...]) -> bool:
    return any(p in func_name for p in patterns)


# availability/probe-style calls carry no training semantics
DEFAULT_API_BLOCKLIST: tuple[str, ...] = (
    "is_available",
    "is_initialized",
    "is_scripting",
    "is_grad_enabled",
    "get_default_dtype",
    "_is_compiled",
)


class RunIndex:
    """Derived lookup structures over one parsed run."""

    def __init__(self, run: TraceRun, api_blocklist: tuple[str, ...] = DEFAULT_API_BLOCKLIST):
        self.run = run
        self.api_blocklist = tuple(api_blocklist)

        self.spans_by_func: dict[str, list[APICallEvent]] = {}
        for span in run.spans:
            if not span.complete or blocklisted(span.func_name, self.api_blocklist):
                continue
            self.spans_by_func.setdefault(span.func_name, []).append(span)

        # entry records of non-blocklisted APIs per (pid, tid, step), in order
        self.step_windows: dict[tuple[int, int, Any], list[TraceRecord]] = {}
        # all entry records per (step, func) across processes, in order
        self.calls_by_step_func: dict[tuple[Any, str], list[TraceRecord]] = {}
        for r in run.records:
            if r.record_kind is not RecordKind.FUNC_ENTRY:
                continue
            if blocklisted(r.func_name, self.api_blocklist):
                continue
            self.step_windows.setdefault((r.process_id, r.thread_id, r.step), []).append(r)
            self.calls_by_step_func.setdefault((r.step, r.func_name), []).append(r)

        # end-of-step variable state: last record per (step, pid, var_id, attr)
        self.step_var_state: dict[Any, dict[tuple[int, str], dict[str, TraceRecord]]] = {}
        self.var_types_attrs: dict[str, set[str]] = {}
        for r in run.records:
            if r.record_kind is not RecordKind.VAR_STATE:
                continue
            self.var_types_attrs.setdefault(r.var_type, set()).add(r.attr_name)
            inst = self.step_var_state.setdefault(r.step, {}).setdefault(
                (r.process_id, r.var_id), {}
            )
            inst[r.attr_name] = r  # later records of the step overwrite

        self.steps = sorted(self.step_var_state, key=_step_sort_key)
        self.window_keys = sorted(self.step_windows, key=lambda k: (k[0], k[1], _step_sort_key(k[2])))

    def sibling_snapshot(self, step: Any, inst: tuple[int, str]) -> dict[str, ValueSnapshot]:
        return {
            attr: rec.attr_value
            for attr, rec in self.step_var_state[step][inst].items()
        }


def _step_sort_key(step: Any):
    return (step is None, str(type(step).__name__), step if step is not None else 0)


# ---------------------------------------------------------------------------
# Relation templates
# ---------------------------------------------------------------------------

class RelationTemplate:
    """Behavior bundle for one relation family."""

    name: ClassVar[str]
    descriptor_arity: ClassVar[str]  # human-readable arity statement

    def check_arity(self, kind: RelationKind, descriptors: tuple[Descriptor, ...]) -> None:
        raise NotImplementedError

    def evaluate(self, kind: RelationKind, descriptors: tuple[Descriptor, ...],
                 entities: tuple[Any, ...]) -> bool:
        """Pure verdict over one example's entities; True means PASSING."""
        raise NotImplementedError

    def instantiate(self, index: RunIndex, budget) -> Iterator[tuple[RelationKind, tuple[Descriptor, ...]]]:
        raise NotImplementedError

    def collect(self, kind: RelationKind, descriptors: tuple[Descriptor, ...],
                index: RunIndex) -> Iterator[Example]:
        raise NotImplementedError

    def _example(self, kind, descriptors, entities, views, step, group_key) -> Example:
        ok = self.evaluate(kind, descriptors, entities)
        return Example(
            kind=kind, descriptors=descriptors, entities=tuple(entities),
            views=tuple(views), verdict=Verdict.PASSING if ok else Verdict.FAILING,
            step=step, group_key=group_key,
        )


class ConsistentRelation(RelationTemplate):
    """Two variable attributes must carry equal values within one step.

    Comparison groups: instances are aligned by the stable suffix of their
    variable id. The self pair (same type and attribute) compares end-of-step
    states of the same suffix across different processes; an attribute pair
    compares the two attributes on the same instance. A hypothesis is only
    seeded when at least one value match exists in the trace.
    """

    name = "Consistent"
    descriptor_arity = "2 variable descriptors"

    def check_arity(self, kind, descriptors):
        if len(descriptors) != 2 or not all(isinstance(d, VariableDescriptor) for d in descriptors):
            raise ArityMismatch(f"{self.name} needs 2 variable descriptors")

    def evaluate(self, kind, descriptors, entities) -> bool:
        a, b = entities
        return a.attr_value.comparable() == b.attr_value.comparable()

    def instantiate(self, index, budget):
        # value sets per (type, attr): instance -> set of observed values
        seen: dict[tuple[str, str], dict[tuple[int, str], set]] = {}
        for step, instances in index.step_var_state.items():
            for inst, recs in instances.items():
                for attr, rec in recs.items():
                    seen.setdefault((rec.var_type, attr), {}).setdefault(inst, set()).add(
                        rec.attr_value.comparable()
                    )
        pairs = 0
        for (var_type, attr), by_inst in sorted(seen.items()):
            # self pair: a value shared by two distinct instances
            values_to_insts: dict[Any, int] = {}
            matched = False
            for inst, values in by_inst.items():
                for v in values:
                    values_to_insts[v] = values_to_insts.get(v, 0) + 1
                    if values_to_insts[v] >= 2:
                        matched = True
                        break
                if matched:
                    break
            if matched:
                d = VariableDescriptor(var_type, attr)
                pairs += 1
                yield RelationKind(self.name), (d, d)
            if budget is not None and pairs >= budget.max_pairs_per_relation:
                return
        # attribute pairs on the same instance, same type
        for var_type in sorted(index.var_types_attrs):
            attrs = sorted(index.var_types_attrs[var_type])
            for a1, a2 in itertools.combinations(attrs, 2):
                matched = False
                for step, instances in index.step_var_state.items():
                    for inst, recs in instances.items():
                        r1, r2 = recs.get(a1), recs.get(a2)
                        if r1 is None or r2 is None or r1.var_type != var_type:
                            continue
                        s1 = {r1.attr_value.comparable()}
                        s2 = {r2.attr_value.comparable()}
                        if s1 & s2:
                            matched = True
                            break
                    if matched:
                        break
                if matched:
                    pairs += 1
                    yield RelationKind(self.name), (
                        VariableDescriptor(var_type, a1),
                        VariableDescriptor(var_type, a2),
                    )
                if budget is not None and pairs >= budget.max_pairs_per_relation:
                    return

    def collect(self, kind, descriptors, index):
        d1, d2 = descriptors
        self_pair = d1 == d2
        for step in index.steps:
            instances = index.step_var_state[step]
            if self_pair:
                groups: dict[str, list[tuple[int, str]]] = {}
                for inst, recs in instances.items():
                    rec = recs.get(d1.attr_name)
                    if rec is not None and rec.var_type == d1.var_type:
                        groups.setdefault(var_key(inst[1]), []).append(inst)
                for suffix in sorted(groups):
                    insts = sorted(groups[suffix])
                    for ia, ib in itertools.combinations(insts, 2):
                        ra = instances[ia][d1.attr_name]
                        rb = instances[ib][d1.attr_name]
                        views = (
                            var_record_view(ra, index.sibling_snapshot(step, ia)),
                            var_record_view(rb, index.sibling_snapshot(step, ib)),
                        )
                        yield self._example(kind, descriptors, (ra, rb), views, step, suffix)
            else:
                for inst in sorted(instances):
                    recs = instances[inst]
                    r1, r2 = recs.get(d1.attr_name), recs.get(d2.attr_name)
                    if r1 is None or r2 is None or r1.var_type != d1.var_type:
                        continue
                    views = (
                        var_record_view(r1, index.sibling_snapshot(step, inst)),
                        var_record_view(r2, index.sibling_snapshot(step, inst)),
                    )
                    yield self._example(kind, descriptors, (r1, r2), views, step, var_key(inst[1]))


class EventContainRelation(RelationTemplate):
    """Every span of one API must contain at least one matching child event."""

    name = "EventContain"
    descriptor_arity = "1 API descriptor + 1 child event descriptor"

    def check_arity(self, kind, descriptors):
        if len(descriptors) != 2 or not isinstance(descriptors[0], APIDescriptor):
            raise ArityMismatch(f"{self.name} needs an API descriptor and an event descriptor")

    def evaluate(self, kind, descriptors, entities) -> bool:
        (span,) = entities
        child_desc = descriptors[1]
        return any(match_descriptor(child_desc, ev) for ev in _descendants(span))

    def instantiate(self, index, budget):
        for func in sorted(index.spans_by_func):
            child_descs: set[Descriptor] = set()
            for span in index.spans_by_func[func]:
                for ev in _descendants(span):
                    if isinstance(ev, APICallEvent):
                        if not blocklisted(ev.func_name, index.api_blocklist):
                            child_descs.add(APIDescriptor(ev.func_name))
                    else:
                        child_descs.add(VariableDescriptor(ev.var_type, ev.attr_name))
                        if ev.changed:
                            child_descs.add(
                                VariableDescriptor(ev.var_type, ev.attr_name, ValuePattern.CHANGED)
                            )
            parent = APIDescriptor(func)
            for child in sorted(child_descs, key=lambda d: d.sort_name()):
                yield RelationKind(self.name), (parent, child)

    def collect(self, kind, descriptors, index):
        parent = descriptors[0]
        for span in index.spans_by_func.get(parent.func_name, ()):
            view = api_record_view(span.entry_record)
            yield self._example(kind, descriptors, (span,), (view,), span.step, parent.func_name)


class APISequenceRelation(RelationTemplate):
    """Listed APIs must all occur, first occurrences in order, per (thread, step)."""

    name = "APISequence"
    descriptor_arity = ">=2 API descriptors, ordered"

    def check_arity(self, kind, descriptors):
        if len(descriptors) < 2 or not all(isinstance(d, APIDescriptor) for d in descriptors):
            raise ArityMismatch(f"{self.name} needs an ordered list of >=2 API descriptors")

    def evaluate(self, kind, descriptors, entities) -> bool:
        listed = [d.func_name for d in descriptors]
        observed = [r.func_name for r in entities]
        return observed == listed

    def instantiate(self, index, budget):
        orders: set[tuple[str, ...]] = set()
        for key in index.window_keys:
            first_seen: list[str] = []
            for r in index.step_windows[key]:
                if r.func_name not in first_seen:
                    first_seen.append(r.func_name)
            if len(first_seen) >= 2:
                orders.add(tuple(first_seen))
        emitted: set[tuple[str, ...]] = set()
        for order in sorted(orders):
            for size in (2, 3):
                for combo in itertools.combinations(order, size):
                    if combo not in emitted:
                        emitted.add(combo)
                        yield RelationKind(self.name), tuple(APIDescriptor(f) for f in combo)
            if budget is not None and len(emitted) >= budget.max_pairs_per_relation:
                return

    def collect(self, kind, descriptors, index):
        listed = {d.func_name for d in descriptors}
        for key in index.window_keys:
            first_records: list[TraceRecord] = []
            seen: set[str] = set()
            for r in index.step_windows[key]:
                if r.func_name in listed and r.func_name not in seen:
                    seen.add(r.func_name)
                    first_records.append(r)
            if not first_records:
                continue  # window never touches the listed APIs: vacuous
            views = tuple(api_record_view(r) for r in first_records)
            yield self._example(
                kind, descriptors, tuple(first_records), views, key[2],
                f"pid{key[0]}.tid{key[1]}",
            )


class APIArgRelation(RelationTemplate):
    """One argument slot must be distinct (or identical) across grouped calls.

    Calls are grouped into one (func, step) window across processes and
    threads; windows with fewer than two calls pass vacuously.
    """

    name = "APIArg"
    descriptor_arity = "1 API descriptor"

    def check_arity(self, kind, descriptors):
        if len(descriptors) != 1 or not isinstance(descriptors[0], APIDescriptor):
            raise ArityMismatch(f"{self.name} needs exactly 1 API descriptor")
        if kind.is_distinct is None or kind.arg_index is None:
            raise ArityMismatch(f"{self.name} needs is_distinct and arg_index parameters")

    def evaluate(self, kind, descriptors, entities) -> bool:
        values = []
        for r in entities:
            args = r.args or ()
            values.append(args[kind.arg_index].comparable() if kind.arg_index < len(args) else None)
        if len(values) < 2:
            return True
        if kind.is_distinct:
            return len(set(values)) == len(values)
        return len(set(values)) == 1

    def instantiate(self, index, budget):
        slots: dict[tuple[str, int], dict[str, bool]] = {}
        for (step, func), records in index.calls_by_step_func.items():
            n_args = max((len(r.args or ()) for r in records), default=0)
            for slot in range(n_args):
                values = [
                    (r.args[slot].comparable() if slot < len(r.args or ()) else None)
                    for r in records
                ]
                entry = slots.setdefault((func, slot), {"distinct": False, "equal": False})
                if len(values) < 2:
                    entry["distinct"] = True
                    entry["equal"] = True
                else:
                    if len(set(values)) == len(values):
                        entry["distinct"] = True
                    if len(set(values)) == 1:
                        entry["equal"] = True
        for (func, slot), ok in sorted(slots.items()):
            if ok["distinct"]:
                yield RelationKind(self.name, is_distinct=True, arg_index=slot), (APIDescriptor(func),)
            if ok["equal"]:
                yield RelationKind(self.name, is_distinct=False, arg_index=slot), (APIDescriptor(func),)

    def collect(self, kind, descriptors, index):
        func = descriptors[0].func_name
        for (step, f), records in sorted(
            index.calls_by_step_func.items(), key=lambda kv: (_step_sort_key(kv[0][0]), kv[0][1])
        ):
            if f != func:
                continue
            views = tuple(api_record_view(r) for r in records)
            yield self._example(kind, descriptors, tuple(records), views, step, func)


class APIOutputRelation(RelationTemplate):
    """The return value's attribute is bound to an input attribute or a constant."""

    name = "APIOutput"
    descriptor_arity = "1 API descriptor"

    def check_arity(self, kind, descriptors):
        if len(descriptors) != 1 or not isinstance(descriptors[0], APIDescriptor):
            raise ArityMismatch(f"{self.name} needs exactly 1 API descriptor")
        if kind.bound_type is None or kind.bound_attr is None:
            raise ArityMismatch(f"{self.name} needs bound_type and bound_attr parameters")

    def evaluate(self, kind, descriptors, entities) -> bool:
        (span,) = entities
        ret = span.exit_record.return_value if span.exit_record else None
        got = snapshot_attr(ret, kind.bound_attr)
        if kind.bound_type is BoundType.EQUALS_INPUT_ATTR:
            args = span.entry_record.args or ()
            if kind.input_index >= len(args):
                return False
            want = snapshot_attr(args[kind.input_index], kind.bound_attr)
            return got is not None and got == want
        return got is not None and got == kind.constant

    def instantiate(self, index, budget):
        for func in sorted(index.spans_by_func):
            spans = [s for s in index.spans_by_func[func] if s.exit_record is not None]
            structured = [
                s for s in spans
                if s.exit_record.return_value is not None and s.exit_record.return_value.is_digest()
            ]
            if not structured:
                continue
            for attr in ("shape", "dtype"):
                # constant binding: the attribute takes one value across all calls
                values = {snapshot_attr(s.exit_record.return_value, attr) for s in structured}
                if len(values) == 1 and (v := values.pop()) is not None:
                    yield (
                        RelationKind(self.name, bound_type=BoundType.CONSTANT_ATTR,
                                     bound_attr=attr, constant=v),
                        (APIDescriptor(func),),
                    )
                # input binding: consistent with at least one call per slot
                n_args = max(len(s.entry_record.args or ()) for s in structured)
                for slot in range(n_args):
                    kind = RelationKind(self.name, bound_type=BoundType.EQUALS_INPUT_ATTR,
                                        bound_attr=attr, input_index=slot)
                    if any(self.evaluate(kind, (), (s,)) for s in structured):
                        yield kind, (APIDescriptor(func),)

    def collect(self, kind, descriptors, index):
        func = descriptors[0].func_name
        for span in index.spans_by_func.get(func, ()):
            if span.exit_record is None:
                continue
            view = api_record_view(span.entry_record)
            yield self._example(kind, descriptors, (span,), (view,), span.step, func)


def _descendants(span: APICallEvent):
    work = list(span.children)
    while work:
        ev = work.pop(0)
        yield ev
        if isinstance(ev, APICallEvent):
            work.extend(ev.children)


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

RELATIONS: dict[str, RelationTemplate] = {}


def register(template: RelationTemplate) -> RelationTemplate:
    RELATIONS[template.name] = template
    return template


for _cls in (ConsistentRelation, EventContainRelation, APISequenceRelation,
             APIArgRelation, APIOutputRelation):
    register(_cls())


def relation_semantics(kind: RelationKind, example: Example) -> Verdict:
    """Recompute the deterministic verdict of an example under a relation."""
    template = RELATIONS[kind.name]
    template.check_arity(kind, example.descriptors)
    ok = template.evaluate(kind, example.descriptors, example.entities)
    return Verdict.PASSING if ok else Verdict.FAILING
