import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from traceguard import ArityMismatch, match_descriptor, relation_semantics
from traceguard.descriptors import APIDescriptor, ValuePattern, VariableDescriptor
from traceguard.events import reconstruct_events
from traceguard.records import entry_record, exit_record, var_state_record
from traceguard.relations import (
    BoundType,
    Example,
    RELATIONS,
    RelationKind,
    RelationTemplate,
    Verdict,
    api_record_view,
    register,
    var_record_view,
)
from traceguard.snapshots import boolean, scalar, synthetic_digest


def _digest(key, shape=(2, 2)):
    return synthetic_digest(key, shape, "float32")


# -- descriptor matching ------------------------------------------------------

def test_variable_descriptor_matches_var_state():
    d = VariableDescriptor("torch.nn.Parameter", "data")
    rec = var_state_record(1, 0, 0, "torch.nn.Parameter", "p0", "data", _digest("a"))
    assert match_descriptor(d, rec)


def test_variable_descriptor_rejects_other_attr():
    d = VariableDescriptor("torch.nn.Parameter", "data")
    rec = var_state_record(1, 0, 0, "torch.nn.Parameter", "p0", "grad", _digest("a"))
    assert not match_descriptor(d, rec)


def test_api_descriptor_matches_entry():
    d = APIDescriptor("Optimizer.zero_grad")
    rec = entry_record(1, 0, 0, "Optimizer.zero_grad")
    assert match_descriptor(d, rec)
    assert not match_descriptor(d, entry_record(1, 0, 0, "Optimizer.step"))


def test_changed_pattern_on_var_change_events():
    records = [
        var_state_record(1, 0, 0, "T", "v", "data", _digest("a")),
        var_state_record(2, 0, 0, "T", "v", "data", _digest("a")),
        var_state_record(3, 0, 0, "T", "v", "data", _digest("b")),
    ]
    changes = reconstruct_events(records)
    any_d = VariableDescriptor("T", "data")
    chg_d = VariableDescriptor("T", "data", ValuePattern.CHANGED)
    assert [match_descriptor(any_d, c) for c in changes] == [True, True, True]
    # first observation counts as a change; a re-observed value does not
    assert [match_descriptor(chg_d, c) for c in changes] == [True, False, True]


# -- relation semantics -------------------------------------------------------

def _consistent_example(va, vb):
    d = VariableDescriptor("nn.Parameter", "data")
    ra = var_state_record(1, 0, 0, "nn.Parameter", "p0", "data", va, {"step": 0})
    rb = var_state_record(1, 1, 0, "nn.Parameter", "p0", "data", vb, {"step": 0})
    views = (var_record_view(ra, {"data": va}), var_record_view(rb, {"data": vb}))
    return Example(
        kind=RelationKind("Consistent"), descriptors=(d, d), entities=(ra, rb),
        views=views, verdict=Verdict.PASSING,
    )


def test_consistent_equal_digests_pass():
    ex = _consistent_example(_digest("same"), _digest("same"))
    assert relation_semantics(RelationKind("Consistent"), ex) is Verdict.PASSING


def test_consistent_unequal_digests_fail():
    ex = _consistent_example(_digest("aa"), _digest("bb"))
    assert relation_semantics(RelationKind("Consistent"), ex) is Verdict.FAILING


def test_consistent_is_symmetric():
    for a, b in [("x", "x"), ("x", "y")]:
        fwd = _consistent_example(_digest(a), _digest(b))
        rev = _consistent_example(_digest(b), _digest(a))
        assert relation_semantics(fwd.kind, fwd) == relation_semantics(rev.kind, rev)


def test_relation_semantics_is_pure():
    ex = _consistent_example(_digest("aa"), _digest("bb"))
    results = {relation_semantics(RelationKind("Consistent"), ex) for _ in range(5)}
    assert results == {Verdict.FAILING}


def test_arity_mismatch_raises():
    ex = _consistent_example(_digest("a"), _digest("a"))
    bad = Example(kind=ex.kind, descriptors=(ex.descriptors[0],), entities=ex.entities,
                  views=ex.views, verdict=ex.verdict)
    with pytest.raises(ArityMismatch):
        relation_semantics(RelationKind("Consistent"), bad)


def _span(records):
    events = reconstruct_events(records)
    return events[0]


def test_event_contain_step_with_data_change_passes():
    span = _span([
        entry_record(1, 0, 0, "optim.Optimizer.step", meta={"step": 0}),
        var_state_record(2, 0, 0, "nn.Parameter", "p0", "data", _digest("w"), {"step": 0}),
        exit_record(3, 0, 0, "optim.Optimizer.step", meta={"step": 0}),
    ])
    kind = RelationKind("EventContain")
    descs = (APIDescriptor("optim.Optimizer.step"), VariableDescriptor("nn.Parameter", "data"))
    ex = Example(kind, descs, (span,), (api_record_view(span.entry_record),), Verdict.PASSING)
    assert relation_semantics(kind, ex) is Verdict.PASSING


def test_event_contain_empty_span_fails():
    span = _span([
        entry_record(1, 0, 0, "optim.Optimizer.step", meta={"step": 0}),
        exit_record(2, 0, 0, "optim.Optimizer.step", meta={"step": 0}),
    ])
    kind = RelationKind("EventContain")
    descs = (APIDescriptor("optim.Optimizer.step"), VariableDescriptor("nn.Parameter", "data"))
    ex = Example(kind, descs, (span,), (api_record_view(span.entry_record),), Verdict.PASSING)
    assert relation_semantics(kind, ex) is Verdict.FAILING


def test_api_sequence_order():
    kind = RelationKind("APISequence")
    descs = (APIDescriptor("a"), APIDescriptor("b"))
    in_order = (entry_record(1, 0, 0, "a"), entry_record(2, 0, 0, "b"))
    out_of_order = (entry_record(1, 0, 0, "b"), entry_record(2, 0, 0, "a"))
    missing = (entry_record(1, 0, 0, "a"),)
    for entities, expect in [(in_order, Verdict.PASSING), (out_of_order, Verdict.FAILING),
                             (missing, Verdict.FAILING)]:
        ex = Example(kind, descs, entities, tuple(api_record_view(r) for r in entities),
                     Verdict.PASSING)
        assert relation_semantics(kind, ex) is expect


def test_api_arg_distinct_and_identical():
    distinct = RelationKind("APIArg", is_distinct=True, arg_index=0)
    identical = RelationKind("APIArg", is_distinct=False, arg_index=0)
    descs = (APIDescriptor("loader.init"),)

    def _ex(kind, values):
        entities = tuple(
            entry_record(i, i, 0, "loader.init", (scalar(v),)) for i, v in enumerate(values)
        )
        return Example(kind, descs, entities, tuple(api_record_view(r) for r in entities),
                       Verdict.PASSING)

    assert relation_semantics(distinct, _ex(distinct, [1, 2, 3])) is Verdict.PASSING
    assert relation_semantics(distinct, _ex(distinct, [1, 2, 2])) is Verdict.FAILING
    assert relation_semantics(identical, _ex(identical, [5, 5])) is Verdict.PASSING
    assert relation_semantics(identical, _ex(identical, [5, 6])) is Verdict.FAILING
    # a single call satisfies either polarity
    assert relation_semantics(distinct, _ex(distinct, [1])) is Verdict.PASSING
    assert relation_semantics(identical, _ex(identical, [1])) is Verdict.PASSING


def test_api_output_shape_binding():
    kind = RelationKind("APIOutput", bound_type=BoundType.EQUALS_INPUT_ATTR,
                        bound_attr="shape", input_index=0)
    descs = (APIDescriptor("proc.collate"),)

    def _ex(in_shape, out_shape):
        span = _span([
            entry_record(1, 0, 0, "proc.collate", (_digest("in", in_shape),)),
            exit_record(2, 0, 0, "proc.collate", _digest("out", out_shape)),
        ])
        return Example(kind, descs, (span,), (api_record_view(span.entry_record),),
                       Verdict.PASSING)

    assert relation_semantics(kind, _ex((32, 16), (32, 16))) is Verdict.PASSING
    assert relation_semantics(kind, _ex((32, 16), (1, 16))) is Verdict.FAILING

    const = RelationKind("APIOutput", bound_type=BoundType.CONSTANT_ATTR,
                         bound_attr="dtype", constant="float32")
    span = _span([
        entry_record(1, 0, 0, "proc.collate", (_digest("i"),)),
        exit_record(2, 0, 0, "proc.collate", _digest("o")),
    ])
    ex = Example(const, descs, (span,), (api_record_view(span.entry_record),), Verdict.PASSING)
    assert relation_semantics(const, ex) is Verdict.PASSING


# -- registry extensibility -----------------------------------------------------

def test_new_relations_can_be_registered():
    class NeverFails(RelationTemplate):
        name = "NeverFails"
        descriptor_arity = "anything"

        def check_arity(self, kind, descriptors):
            return None

        def evaluate(self, kind, descriptors, entities):
            return True

    register(NeverFails())
    try:
        assert "NeverFails" in RELATIONS
        ex = Example(RelationKind("NeverFails"), (), (), (), Verdict.PASSING)
        assert relation_semantics(RelationKind("NeverFails"), ex) is Verdict.PASSING
    finally:
        del RELATIONS["NeverFails"]


# -- descriptor partitioning property -----------------------------------------

@given(st.lists(st.sampled_from(["data", "grad"]), min_size=1, max_size=6))
@settings(max_examples=50)
def test_descriptor_matching_is_pure_and_total(attrs):
    d = VariableDescriptor("T", "data")
    records = [
        var_state_record(i, 0, 0, "T", "p", a, boolean(True)) for i, a in enumerate(attrs)
    ]
    expected = [a == "data" for a in attrs]
    assert [match_descriptor(d, r) for r in records] == expected
    assert [match_descriptor(d, r) for r in records] == expected  # stable
