"""Precondition deduction: the weakest-safe separation of passing from failing.

A precondition is a disjunction of conjunctions of conditions over record
fields. Deduction starts from the conjunction of conditions shared by all
passing examples; when that candidate is unsafe (still true on some failing
example), it is augmented with disjunctive groups of partially-covering
conditions, chosen in decreasing order of how many passing examples they
cover. The result is safe by construction: true on every passing example and
false on every failing one. No weakest-ness is guaranteed, only safety.

Conditions on fields a relation marks as off-limits (its own examined
attributes, and every digest-typed sibling when the relation itself compares
digests) are never generated: they would separate perfectly but only restate
the relation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Sequence

from .descriptors import VariableDescriptor
from .errors import EmptyExample
from .relations import Example, RelationKind


class ConditionType(str, Enum):
    CONSISTENT = "CONSISTENT"
    CONSTANT = "CONSTANT"
    EXIST = "EXIST"
    UNEQUAL = "UNEQUAL"


_SCALAR_TYPES = (bool, int, float, str)


@dataclass(frozen=True)
class Condition:
    """One predicate comparing a field's values across an example's records."""

    ctype: ConditionType
    field_path: str
    required_value: Any = None  # CONSTANT only

    def holds(self, example: Example) -> bool:
        present: list[Any] = []
        missing = False
        for view in example.views:
            d = view.as_dict()
            if self.field_path in d:
                present.append(d[self.field_path])
            else:
                missing = True
        if self.ctype is ConditionType.EXIST:
            return not missing and bool(present)
        if self.ctype is ConditionType.UNEQUAL:
            return len(set(present)) >= 2
        if missing or not present:
            return False
        if len(set(present)) != 1:
            return False
        if self.ctype is ConditionType.CONSTANT:
            return present[0] == self.required_value
        return True  # CONSISTENT

    def sort_key(self):
        return (self.field_path, self.ctype.value, repr(self.required_value))

    def to_wire(self) -> dict:
        obj: dict[str, Any] = {"t": self.ctype.value, "f": self.field_path}
        if self.ctype is ConditionType.CONSTANT:
            obj["v"] = self.required_value
        return obj

    @staticmethod
    def from_wire(obj: dict) -> "Condition":
        return Condition(ConditionType(obj["t"]), obj["f"], obj.get("v"))


@dataclass(frozen=True)
class Clause:
    """A conjunction of conditions."""

    conditions: tuple[Condition, ...]

    def holds(self, example: Example) -> bool:
        return all(c.holds(example) for c in self.conditions)


@dataclass(frozen=True)
class Precondition:
    """Disjunction of conjunctions; ``trivially_true`` marks the unconditional case."""

    clauses: tuple[Clause, ...] = ()
    trivially_true: bool = False

    def holds(self, example: Example) -> bool:
        if self.trivially_true:
            return True
        return any(cl.holds(example) for cl in self.clauses)

    def satisfied_clause(self, example: Example) -> Clause | None:
        if self.trivially_true:
            return Clause(())
        for cl in self.clauses:
            if cl.holds(example):
                return cl
        return None

    def all_conditions(self) -> list[Condition]:
        return sorted({c for cl in self.clauses for c in cl.conditions},
                      key=Condition.sort_key)

    def to_wire(self) -> dict:
        if self.trivially_true:
            return {"any": [{"all": []}]}
        return {
            "any": [
                {"all": [c.to_wire() for c in cl.conditions]} for cl in self.clauses
            ]
        }

    @staticmethod
    def from_wire(obj: dict) -> "Precondition":
        clauses = tuple(
            Clause(tuple(Condition.from_wire(c) for c in cl["all"]))
            for cl in obj["any"]
        )
        if any(not cl.conditions for cl in clauses):
            return Precondition((), trivially_true=True)
        return Precondition(clauses)


TRIVIALLY_TRUE = Precondition((), trivially_true=True)

BlockPredicate = Callable[[str], bool]


def is_safe(precond: Precondition, passing: Sequence[Example], failing: Sequence[Example]) -> bool:
    """True on every passing example and false on every failing one."""
    return all(precond.holds(e) for e in passing) and not any(
        precond.holds(e) for e in failing
    )


def conditions_of(example: Example, blocked: BlockPredicate | None = None) -> frozenset[Condition]:
    """All conditions satisfied across the records of one example.

    CONSTANT is only generated for scalar, boolean, and string values; digest
    values are run-specific and pinning them would kill transferability.
    """
    if not example.views:
        raise EmptyExample("cannot enumerate conditions of an empty example")
    field_names: set[str] = set()
    digest_fields: set[str] = set()
    for view in example.views:
        field_names.update(dict(view.fields))
        digest_fields.update(view.digest_fields)

    out: set[Condition] = set()
    n = len(example.views)
    for f in sorted(field_names):
        if blocked is not None and blocked(f):
            continue
        present = [
            view.as_dict()[f] for view in example.views if f in view.as_dict()
        ]
        distinct = set(present)
        if len(present) == n:
            out.add(Condition(ConditionType.EXIST, f))
            if len(distinct) == 1:
                out.add(Condition(ConditionType.CONSISTENT, f))
                v = present[0]
                if f not in digest_fields and isinstance(v, _SCALAR_TYPES):
                    out.add(Condition(ConditionType.CONSTANT, f, v))
        if len(distinct) >= 2:
            out.add(Condition(ConditionType.UNEQUAL, f))
    return frozenset(out)


def blocklist_for(kind: RelationKind, descriptors: tuple, digest_attrs: Iterable[str] = ()) -> BlockPredicate:
    """Field paths a relation refuses to condition on.

    Every relation blocks its own examined fields. A Consistent relation over
    digest-typed attributes additionally blocks every other digest-typed
    attribute of the compared variables: correlated tensor state separates
    perfectly but says nothing about when the relation applies.
    """
    own: set[str] = set()
    for d in descriptors:
        if isinstance(d, VariableDescriptor):
            own.add(d.attr_name)
    if kind.name == "APIArg" and kind.arg_index is not None:
        own.add(f"args.{kind.arg_index}")
    block_digests = False
    if kind.name == "Consistent":
        digest_attrs = set(digest_attrs)
        if any(d.attr_name in digest_attrs for d in descriptors if isinstance(d, VariableDescriptor)):
            block_digests = True
            own.update(digest_attrs)

    def blocked(field_path: str, _own=frozenset(own), _digests=block_digests) -> bool:
        return field_path in _own

    return blocked


def observed_digest_attrs(examples: Sequence[Example]) -> frozenset[str]:
    out: set[str] = set()
    for e in examples:
        for view in e.views:
            out.update(view.digest_fields)
    return frozenset(out)


@dataclass
class DeduceBudget:
    max_safety_evals: int = 1000


@dataclass
class DeduceStats:
    safety_evals: int = 0
    budget_exhausted: bool = False


def deduce(
    passing: Sequence[Example],
    failing: Sequence[Example],
    budget: DeduceBudget | None = None,
    blocked: BlockPredicate | None = None,
    strategy: str = "augment",
    stats: DeduceStats | None = None,
) -> Precondition | None:
    """Deduce a safe precondition, or None when no separation is found.

    With no failing examples the invariant is unconditional. Otherwise the
    candidate conjunction of universally shared conditions is tried first,
    then augmented per ``strategy``: "augment" adds disjunctive groups of
    partially-covering conditions ranked by passing coverage; "split" groups
    the passing examples by their most significant non-universal condition
    and deduces one clause per subgroup.
    """
    if not passing:
        raise EmptyExample("deduction requires at least one passing example")
    budget = budget or DeduceBudget()
    stats = stats if stats is not None else DeduceStats()

    if not failing:
        return TRIVIALLY_TRUE

    passing_conds = [conditions_of(e, blocked) for e in passing]
    failing_conds = [conditions_of(e, blocked) for e in failing]

    base = frozenset.intersection(*passing_conds)
    base_sorted = tuple(sorted(base, key=Condition.sort_key))

    def spend() -> bool:
        stats.safety_evals += 1
        if stats.safety_evals > budget.max_safety_evals:
            stats.budget_exhausted = True
            return False
        return True

    # candidate: plain conjunction of the universally shared conditions
    if not spend():
        return None
    unsafe_on = [fc for fc in failing_conds if base <= fc]
    if not unsafe_on:
        precond = Precondition((Clause(base_sorted),))
        return prune(precond, failing)

    if strategy == "split":
        precond = _deduce_by_splitting(passing_conds, failing_conds, base, spend)
    else:
        precond = _deduce_by_augmentation(passing_conds, failing_conds, base, spend)
    if precond is None:
        return None
    return prune(precond, failing)


def _coverage_order(partial: Iterable[Condition], passing_conds: list[frozenset[Condition]]):
    """Partial conditions in decreasing statistical significance.

    Significance is the number of passing examples a condition covers; ties
    break lexicographically on (field_path, condition type, value).
    """
    cover = {
        a: frozenset(i for i, pc in enumerate(passing_conds) if a in pc)
        for a in partial
    }
    ranked = sorted(cover, key=lambda a: (-len(cover[a]),) + a.sort_key())
    return ranked, cover


def _deduce_by_augmentation(passing_conds, failing_conds, base, spend) -> Precondition | None:
    all_passing = frozenset(range(len(passing_conds)))
    partial = frozenset().union(*passing_conds) - base
    ranked, cover = _coverage_order(partial, passing_conds)

    groups: list[tuple[Condition, ...]] = []

    def formula_true_on(fc: frozenset[Condition]) -> bool:
        if not base <= fc:
            return False
        return all(any(a in fc for a in g) for g in groups)

    remaining = [fc for fc in failing_conds if formula_true_on(fc)]
    while remaining:
        if not spend():
            return None
        target = remaining[0]
        group: list[Condition] = []
        covered: set[int] = set()
        for a in ranked:
            if a in target:
                continue  # true on the target: cannot help falsify it
            gain = cover[a] - covered
            if not gain:
                continue
            group.append(a)
            covered.update(gain)
            if covered == all_passing:
                break
        if covered != all_passing:
            return None  # no disjunctive group can eliminate this example
        groups.append(tuple(group))
        remaining = [fc for fc in remaining if formula_true_on(fc)]

    return _to_dnf(base, groups)


def _deduce_by_splitting(passing_conds, failing_conds, base, spend) -> Precondition | None:
    partial = frozenset().union(*passing_conds) - base
    ranked, _cover = _coverage_order(partial, passing_conds)
    rank_of = {a: i for i, a in enumerate(ranked)}

    subgroups: dict[Condition | None, list[frozenset[Condition]]] = {}
    for pc in passing_conds:
        own = [a for a in pc if a in rank_of]
        key = min(own, key=lambda a: rank_of[a]) if own else None
        subgroups.setdefault(key, []).append(pc)

    clauses: list[Clause] = []
    for key in sorted(subgroups, key=lambda k: (k is None,) + (k.sort_key() if k else ())):
        conj = frozenset.intersection(*subgroups[key])
        if not spend():
            return None
        if any(conj <= fc for fc in failing_conds):
            return None  # subgroup clause unsafe; no deeper split attempted
        clauses.append(Clause(tuple(sorted(conj, key=Condition.sort_key))))
    return Precondition(tuple(clauses))


def _to_dnf(base: frozenset[Condition], groups: list[tuple[Condition, ...]]) -> Precondition:
    """Expand (base AND group1 AND group2 ...) into minimized clauses."""
    clause_sets: list[frozenset[Condition]] = [frozenset(base)]
    for g in groups:
        clause_sets = [cs | {a} for cs in clause_sets for a in g]
    # absorption: a clause implied by a weaker one adds nothing
    clause_sets = sorted(set(clause_sets), key=len)
    kept: list[frozenset[Condition]] = []
    for cs in clause_sets:
        if not any(k <= cs for k in kept):
            kept.append(cs)
    kept.sort(key=lambda cs: tuple(sorted(c.sort_key() for c in cs)))
    return Precondition(
        tuple(Clause(tuple(sorted(cs, key=Condition.sort_key))) for cs in kept)
    )


def prune(precond: Precondition, failing: Sequence[Example]) -> Precondition:
    """Drop conditions no failing example ever violates.

    Such conditions evaluate true everywhere and are not discriminative;
    removing them cannot break safety because, for every failing example,
    each clause keeps at least one condition that is false on it.
    """
    if precond.trivially_true or not failing:
        return precond
    clauses: list[Clause] = []
    for cl in precond.clauses:
        survivors = tuple(
            c for c in cl.conditions if not all(c.holds(f) for f in failing)
        )
        clauses.append(Clause(survivors))
    # absorption again: pruning may collapse clauses into one another
    kept: list[Clause] = []
    for cl in sorted(set(clauses), key=lambda c: (len(c.conditions), tuple(x.sort_key() for x in c.conditions))):
        if not any(set(k.conditions) <= set(cl.conditions) for k in kept):
            kept.append(cl)
    return Precondition(tuple(kept))


def is_superficial(failing: Sequence[Example], precond_result: Precondition | None) -> bool:
    """A hypothesis whose failing examples admit no safe precondition."""
    return bool(failing) and precond_result is None
