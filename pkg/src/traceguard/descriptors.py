"""Descriptors: abstract selectors over trace entities.

A descriptor names a *group* of concrete entities (every call of one API,
every instance of one variable type/attribute) instead of enumerating
instances. Matching is pure and total over the entity kinds a descriptor
applies to.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any

from .events import APICallEvent, VarChangeEvent
from .records import RecordKind, TraceRecord
from .snapshots import ValueSnapshot


class ValuePattern(str, Enum):
    """Constraint a variable descriptor can put on the observed change."""

    ANY = "any"
    CHANGED = "changed"


@dataclass(frozen=True)
class APIDescriptor:
    """Selects API calls by fully qualified name, optionally by arg/return."""

    func_name: str
    arg_constraints: tuple[tuple[int, ValueSnapshot], ...] = ()
    return_constraint: ValueSnapshot | None = None

    def matches_record(self, record: TraceRecord) -> bool:
        if record.record_kind not in (RecordKind.FUNC_ENTRY, RecordKind.FUNC_EXIT):
            return False
        return record.func_name == self.func_name

    def matches_span(self, span: APICallEvent) -> bool:
        if span.func_name != self.func_name:
            return False
        for pos, want in self.arg_constraints:
            args = span.entry_record.args or ()
            if pos >= len(args) or args[pos].comparable() != want.comparable():
                return False
        if self.return_constraint is not None:
            if span.exit_record is None:
                return False
            ret = span.exit_record.return_value
            if ret is None or ret.comparable() != self.return_constraint.comparable():
                return False
        return True

    def sort_name(self) -> str:
        return f"api:{self.func_name}"

    def to_wire(self) -> dict:
        obj: dict[str, Any] = {"api": self.func_name}
        if self.arg_constraints:
            obj["arg_constraints"] = [
                [pos, v.to_wire()] for pos, v in self.arg_constraints
            ]
        if self.return_constraint is not None:
            obj["return_constraint"] = self.return_constraint.to_wire()
        return obj


@dataclass(frozen=True)
class VariableDescriptor:
    """Selects variable states by (type name, attribute name).

    ``pattern`` optionally restricts which observations count: CHANGED only
    matches transitions to a different value (first observations included),
    and ``expected_value`` pins an exact value.
    """

    var_type: str
    attr_name: str
    pattern: ValuePattern = ValuePattern.ANY
    expected_value: ValueSnapshot | None = None

    def matches_record(self, record: TraceRecord) -> bool:
        if record.record_kind is not RecordKind.VAR_STATE:
            return False
        if record.var_type != self.var_type or record.attr_name != self.attr_name:
            return False
        if self.expected_value is not None:
            return record.attr_value.comparable() == self.expected_value.comparable()
        return True

    def matches_change(self, ev: VarChangeEvent) -> bool:
        if ev.var_type != self.var_type or ev.attr_name != self.attr_name:
            return False
        if self.pattern is ValuePattern.CHANGED and not ev.changed:
            return False
        if self.expected_value is not None:
            return ev.new_value.comparable() == self.expected_value.comparable()
        return True

    def sort_name(self) -> str:
        suffix = "" if self.pattern is ValuePattern.ANY else f"[{self.pattern.value}]"
        return f"var:{self.var_type}.{self.attr_name}{suffix}"

    def to_wire(self) -> dict:
        obj: dict[str, Any] = {"var_type": self.var_type, "attr": self.attr_name}
        if self.pattern is not ValuePattern.ANY:
            obj["pattern"] = self.pattern.value
        if self.expected_value is not None:
            obj["expected_value"] = self.expected_value.to_wire()
        return obj


Descriptor = APIDescriptor | VariableDescriptor


def descriptor_from_wire(obj: dict) -> Descriptor:
    if "api" in obj:
        return APIDescriptor(
            func_name=obj["api"],
            arg_constraints=tuple(
                (int(pos), ValueSnapshot.from_wire(v))
                for pos, v in obj.get("arg_constraints", [])
            ),
            return_constraint=(
                ValueSnapshot.from_wire(obj["return_constraint"])
                if "return_constraint" in obj
                else None
            ),
        )
    return VariableDescriptor(
        var_type=obj["var_type"],
        attr_name=obj["attr"],
        pattern=ValuePattern(obj.get("pattern", "any")),
        expected_value=(
            ValueSnapshot.from_wire(obj["expected_value"])
            if "expected_value" in obj
            else None
        ),
    )


def match_descriptor(d: Descriptor, entity: TraceRecord | APICallEvent | VarChangeEvent) -> bool:
    """Pure predicate: does this concrete entity belong to the descriptor's group."""
    if isinstance(entity, TraceRecord):
        return d.matches_record(entity)
    if isinstance(entity, APICallEvent):
        return isinstance(d, APIDescriptor) and d.matches_span(entity)
    if isinstance(entity, VarChangeEvent):
        return isinstance(d, VariableDescriptor) and d.matches_change(entity)
    return False
