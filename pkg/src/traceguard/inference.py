"""The inference loop: hypotheses over all traces, examples, preconditions.

For every relation template, hypotheses are seeded from each input run,
examples are collected from each run (append-only; a later run never flips an
earlier verdict), and a precondition is deduced per hypothesis. Hypotheses
with failing examples but no deducible precondition are superficial and
dropped; everything else becomes an invariant. Output ordering and invariant
ids are stable so the invariant file diffs cleanly across reruns.

Hypotheses are never discarded for a poor passing/failing ratio; precondition
failure is the only filter.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .descriptors import Descriptor, descriptor_from_wire
from .errors import EmptyTraceWarning, SchemaVersionMismatch
from .events import TraceRun
from .precondition import (
    DeduceBudget,
    DeduceStats,
    Precondition,
    blocklist_for,
    deduce,
    observed_digest_attrs,
)
from .relations import (
    DEFAULT_API_BLOCKLIST,
    Example,
    RelationKind,
    RELATIONS,
    RunIndex,
)

logger = logging.getLogger(__name__)

ENGINE_NAME = "traceguard"
ENGINE_VERSION = "0.1.0"
INVARIANT_FILE_SCHEMA = 1


@dataclass
class InferBudget:
    """Caps that bound hypothesis enumeration and example storage.

    Example sampling only limits what is *stored* per hypothesis; every
    observation still contributes to the verdict statistics.
    """

    max_pairs_per_relation: int = 10_000
    max_examples_per_hypothesis: int = 10_000
    max_safety_evals: int = 1_000


class _Reservoir:
    """Deterministic reservoir sample of the example stream."""

    def __init__(self, cap: int, seed: int):
        self.cap = cap
        self.rng = random.Random(seed)
        self.count = 0
        self.items: list[Example] = []

    def add(self, item: Example) -> None:
        self.count += 1
        if len(self.items) < self.cap:
            self.items.append(item)
        else:
            j = self.rng.randrange(self.count)
            if j < self.cap:
                self.items[j] = item


def _identity_obj(kind: RelationKind, descriptors: tuple[Descriptor, ...]) -> dict:
    return {
        "relation": kind.name,
        "params": kind.params_wire(),
        "descriptors": [d.to_wire() for d in descriptors],
    }


def _identity_hash(kind: RelationKind, descriptors: tuple[Descriptor, ...]) -> str:
    blob = json.dumps(_identity_obj(kind, descriptors), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class Hypothesis:
    """A relation instantiated with descriptors, plus its observed evidence."""

    kind: RelationKind
    descriptors: tuple[Descriptor, ...]
    source_traces: list[str] = field(default_factory=list)
    _passing: _Reservoir | None = None
    _failing: _Reservoir | None = None
    total_passing: int = 0
    total_failing: int = 0

    def _ensure_reservoirs(self, cap: int) -> None:
        if self._passing is None:
            seed = int(self._identity_hash()[:8], 16)
            self._passing = _Reservoir(cap, seed)
            self._failing = _Reservoir(cap, seed ^ 0xA5A5A5)

    def _identity_hash(self) -> str:
        return _identity_hash(self.kind, self.descriptors)

    @property
    def passing(self) -> list[Example]:
        return self._passing.items if self._passing else []

    @property
    def failing(self) -> list[Example]:
        return self._failing.items if self._failing else []

    def sort_key(self):
        return (
            self.kind.name,
            tuple(d.sort_name() for d in self.descriptors),
            json.dumps(self.kind.params_wire(), sort_keys=True),
        )


@dataclass
class Invariant:
    """A validated relation instance with its precondition and provenance."""

    kind: RelationKind
    descriptors: tuple[Descriptor, ...]
    precondition: Precondition
    stats: dict[str, int]
    provenance: dict[str, Any] = field(default_factory=dict)

    @property
    def id(self) -> str:
        return _identity_hash(self.kind, self.descriptors)[:12]

    def describe(self) -> str:
        names = ", ".join(d.sort_name() for d in self.descriptors)
        return f"{self.kind.name}({names})"

    def specificity(self) -> int:
        """How constrained the instance is; used by the deterministic cap."""
        score = 0
        for d in self.descriptors:
            wire = d.to_wire()
            score += len(wire) - 1  # fields beyond the bare name
        score += len(self.kind.params_wire())
        return score

    def to_wire(self) -> dict:
        obj = _identity_obj(self.kind, self.descriptors)
        obj["id"] = self.id
        obj["precondition"] = self.precondition.to_wire()
        obj["stats"] = dict(self.stats)
        return obj

    @staticmethod
    def from_wire(obj: dict) -> "Invariant":
        kind = RelationKind.from_wire(obj["relation"], obj.get("params", {}))
        descriptors = tuple(descriptor_from_wire(d) for d in obj["descriptors"])
        return Invariant(
            kind=kind,
            descriptors=descriptors,
            precondition=Precondition.from_wire(obj["precondition"]),
            stats=dict(obj.get("stats", {})),
        )

    def sort_key(self):
        return (
            self.kind.name,
            tuple(d.sort_name() for d in self.descriptors),
            json.dumps(self.kind.params_wire(), sort_keys=True),
        )


@dataclass
class InferenceResult:
    invariants: list[Invariant]
    superficial: int = 0
    budget_exhausted: bool = False
    hypotheses: list[Hypothesis] | None = None
    run_ids: list[str] = field(default_factory=list)


def collect_examples(hypo: Hypothesis, index: RunIndex, budget: InferBudget) -> Hypothesis:
    """Append every matching example of one run to the hypothesis.

    Verdicts come from the relation's semantics at collection time and are
    never revisited when later traces are added.
    """
    hypo._ensure_reservoirs(budget.max_examples_per_hypothesis)
    template = RELATIONS[hypo.kind.name]
    for example in template.collect(hypo.kind, hypo.descriptors, index):
        if example.passing:
            hypo.total_passing += 1
            hypo._passing.add(example)
        else:
            hypo.total_failing += 1
            hypo._failing.add(example)
    if index.run.run_id not in hypo.source_traces:
        hypo.source_traces.append(index.run.run_id)
    return hypo


def _infer_one_relation(
    name: str,
    indexes: list[RunIndex],
    budget: InferBudget,
    strategy: str,
) -> tuple[list[tuple[Hypothesis, Invariant]], int, bool]:
    template = RELATIONS[name]
    hypotheses: dict[tuple, Hypothesis] = {}
    for index in indexes:
        for kind, descriptors in template.instantiate(index, budget):
            key = (kind, descriptors)
            if key not in hypotheses:
                hypotheses[key] = Hypothesis(kind=kind, descriptors=descriptors)

    for hypo in hypotheses.values():
        for index in indexes:
            collect_examples(hypo, index, budget)

    produced: list[tuple[Hypothesis, Invariant]] = []
    superficial = 0
    exhausted = False
    for hypo in sorted(hypotheses.values(), key=Hypothesis.sort_key):
        if hypo.total_passing == 0:
            continue  # never held anywhere: nothing to assert
        digest_attrs = observed_digest_attrs(hypo.passing + hypo.failing)
        blocked = blocklist_for(hypo.kind, hypo.descriptors, digest_attrs)
        stats = DeduceStats()
        precond = deduce(
            hypo.passing,
            hypo.failing,
            budget=DeduceBudget(max_safety_evals=budget.max_safety_evals),
            blocked=blocked,
            strategy=strategy,
            stats=stats,
        )
        exhausted = exhausted or stats.budget_exhausted
        if precond is None:
            superficial += 1
            logger.debug("superficial: %s(%s)", name, hypo.descriptors)
            continue
        inv = Invariant(
            kind=hypo.kind,
            descriptors=hypo.descriptors,
            precondition=precond,
            stats={"passing": hypo.total_passing, "failing": hypo.total_failing},
        )
        produced.append((hypo, inv))
    return produced, superficial, exhausted


def infer(
    runs: Sequence[TraceRun],
    relations: Sequence[str] | None = None,
    budget: InferBudget | None = None,
    api_blocklist: tuple[str, ...] = DEFAULT_API_BLOCKLIST,
    strategy: str = "augment",
    jobs: int = 1,
    keep_hypotheses: bool = False,
) -> InferenceResult:
    """Run the full inference loop over parsed runs and emit invariants."""
    if not runs:
        raise ValueError("inference requires at least one trace run")
    budget = budget or InferBudget()
    names = sorted(relations) if relations else sorted(RELATIONS)
    for n in names:
        if n not in RELATIONS:
            raise KeyError(f"unknown relation {n!r}; registered: {sorted(RELATIONS)}")

    for run in runs:
        if not run.records:
            warnings.warn(f"trace run {run.run_id!r} is empty", EmptyTraceWarning)

    indexes = [RunIndex(run, api_blocklist) for run in runs]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_relation = list(
                pool.map(lambda n: _infer_one_relation(n, indexes, budget, strategy), names)
            )
    else:
        per_relation = [_infer_one_relation(n, indexes, budget, strategy) for n in names]

    pairs: list[tuple[Hypothesis, Invariant]] = []
    superficial = 0
    exhausted = False
    for produced, sup, exh in per_relation:
        pairs.extend(produced)
        superficial += sup
        exhausted = exhausted or exh

    run_ids = [r.run_id for r in runs]
    invariants = []
    for hypo, inv in sorted(pairs, key=lambda hi: hi[1].sort_key()):
        inv.provenance = {"runs": run_ids, "engine": f"{ENGINE_NAME} {ENGINE_VERSION}"}
        invariants.append(inv)

    return InferenceResult(
        invariants=invariants,
        superficial=superficial,
        budget_exhausted=exhausted,
        hypotheses=[h for h, _ in sorted(pairs, key=lambda hi: hi[1].sort_key())] if keep_hypotheses else None,
        run_ids=run_ids,
    )


def select_top(invariants: Sequence[Invariant], cap: int) -> list[Invariant]:
    """Deterministic cap: keep the first ``cap`` invariants by priority.

    Priority orders by relation name, then higher descriptor specificity,
    then more passing evidence, then id; the surviving set is re-sorted into
    canonical file order.
    """
    ranked = sorted(
        invariants,
        key=lambda inv: (
            inv.kind.name,
            -inv.specificity(),
            -inv.stats.get("passing", 0),
            inv.id,
        ),
    )
    kept = ranked[: max(cap, 0)]
    return sorted(kept, key=Invariant.sort_key)


# ---------------------------------------------------------------------------
# Invariant file
# ---------------------------------------------------------------------------

def invariant_file_obj(result_invariants: Sequence[Invariant], run_ids: Sequence[str],
                       budget_exhausted: bool = False, strategy: str = "augment") -> dict:
    return {
        "schema": INVARIANT_FILE_SCHEMA,
        "engine": {"name": ENGINE_NAME, "version": ENGINE_VERSION, "strategy": strategy},
        "provenance": {"runs": list(run_ids), "budget_exhausted": budget_exhausted},
        "count": len(result_invariants),
        "invariants": [inv.to_wire() for inv in result_invariants],
    }


def dump_invariants(obj_or_invariants, path: str | Path, **kwargs) -> None:
    if isinstance(obj_or_invariants, dict):
        obj = obj_or_invariants
    else:
        obj = invariant_file_obj(obj_or_invariants, **kwargs)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_invariants(path: str | Path) -> list[Invariant]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("schema") != INVARIANT_FILE_SCHEMA:
        raise SchemaVersionMismatch(
            f"invariant file schema {obj.get('schema')!r} is not supported"
        )
    return [Invariant.from_wire(item) for item in obj["invariants"]]
