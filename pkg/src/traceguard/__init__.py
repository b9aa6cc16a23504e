"""traceguard: mine training invariants from execution traces, catch silent errors.

The package splits into a trace model (records, events, wire format),
relation templates with descriptors, the inference engine with precondition
deduction, a streaming verifier, a synthetic trace generator with a fault
catalog, and an estimator-style facade tying inference and checking together.
"""

from .descriptors import APIDescriptor, ValuePattern, VariableDescriptor, match_descriptor
from .errors import (
    ArityMismatch,
    EmptyExample,
    EmptyTraceWarning,
    ExitWithoutEntry,
    IncompleteStreamWarning,
    InvalidConfig,
    MalformedRecord,
    SchemaVersionMismatch,
    TraceGuardError,
)
from .estimator import InvariantMiner
from .events import APICallEvent, TraceRun, VarChangeEvent, reconstruct_events
from .generator import FaultKind, FaultSpec, RunConfig, describe_faults, generate
from .inference import (
    Hypothesis,
    InferBudget,
    Invariant,
    collect_examples,
    dump_invariants,
    infer,
    load_invariants,
    select_top,
)
from .precondition import (
    Clause,
    Condition,
    ConditionType,
    DeduceBudget,
    Precondition,
    blocklist_for,
    conditions_of,
    deduce,
    is_safe,
    is_superficial,
    prune,
)
from .records import RecordKind, TraceRecord, parse_trace, serialize_trace
from .relations import (
    BoundType,
    Example,
    RelationKind,
    RELATIONS,
    Verdict,
    relation_semantics,
)
from .snapshots import ValueSnapshot, content_digest
from .verifier import (
    SelectionManifest,
    StreamChecker,
    ViolationReport,
    check_stream,
    required_descriptors,
)

__version__ = "0.1.0"
