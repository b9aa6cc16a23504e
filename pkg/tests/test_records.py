import io
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from traceguard import MalformedRecord, SchemaVersionMismatch, parse_trace, serialize_trace
from traceguard.records import (
    RecordKind,
    encode_line,
    entry_record,
    exit_record,
    header_line,
    var_state_record,
)
from traceguard.snapshots import (
    boolean,
    none_value,
    scalar,
    string,
    struct,
    synthetic_digest,
)


def test_parse_empty_stream():
    assert parse_trace(io.StringIO("")) == []


def test_parse_single_entry():
    text = header_line() + "\n" + encode_line(
        entry_record(1, 0, 0, "Optimizer.step", (), {"step": 0}).to_wire()
    )
    records = parse_trace(io.StringIO(text))
    assert len(records) == 1
    assert records[0].record_kind is RecordKind.FUNC_ENTRY
    assert records[0].func_name == "Optimizer.step"


def test_parse_three_records_preserves_order_and_round_trips():
    records = [
        entry_record(1, 0, 0, "f", (scalar(3),), {"step": 0}),
        var_state_record(2, 0, 0, "nn.Parameter", "p0", "data",
                         synthetic_digest("x", (2, 2), "float32"), {"step": 0}),
        exit_record(3, 0, 0, "f", none_value(), meta={"step": 0}),
    ]
    text = serialize_trace(records)
    parsed = parse_trace(io.StringIO(text))
    assert [r.record_kind for r in parsed] == [
        RecordKind.FUNC_ENTRY, RecordKind.VAR_STATE, RecordKind.FUNC_EXIT
    ]
    assert serialize_trace(parsed) == text


def test_malformed_line_carries_line_number():
    text = header_line() + "\n{not json\n"
    with pytest.raises(MalformedRecord) as exc:
        parse_trace(io.StringIO(text))
    assert exc.value.line_no == 2


def test_missing_header_rejected():
    text = encode_line(entry_record(1, 0, 0, "f").to_wire())
    with pytest.raises(MalformedRecord):
        parse_trace(io.StringIO(text))


def test_unknown_schema_rejected():
    text = '{"kind":"header","schema":2}\n'
    with pytest.raises(SchemaVersionMismatch):
        parse_trace(io.StringIO(text))


def test_bytes_stream_accepted():
    text = serialize_trace([entry_record(1, 0, 0, "f")])
    assert len(parse_trace(io.BytesIO(text.encode()))) == 1


def test_snapshot_wire_forms():
    assert scalar(2).to_wire() == {"k": "scalar", "v": 2}
    assert string("x").to_wire() == {"k": "str", "v": "x"}
    assert boolean(True).to_wire() == {"k": "bool", "v": True}
    assert none_value().to_wire() == {"k": "none"}
    d = synthetic_digest("k", (3, 4), "float32").to_wire()
    assert set(d) == {"k", "d", "shape", "dtype"} and d["k"] == "digest"
    s = struct({"a": scalar(1)}).to_wire()
    assert s == {"k": "struct", "fields": {"a": {"k": "scalar", "v": 1}}}


def test_digest_equality_implies_shape_dtype_equality():
    a = synthetic_digest("same", (2, 3), "float32")
    b = synthetic_digest("same", (2, 3), "float32")
    c = synthetic_digest("same", (3, 2), "float32")
    assert a.digest == b.digest
    assert a.digest != c.digest  # shape is in the preimage


_snapshots = st.one_of(
    st.integers(-1000, 1000).map(scalar),
    st.booleans().map(boolean),
    st.sampled_from(["", "x", "text/ü"]).map(string),
    st.just(none_value()),
    st.sampled_from(["a", "b", "c"]).map(
        lambda k: synthetic_digest(k, (2, 3), "float32")
    ),
)

_meta = st.dictionaries(
    st.sampled_from(["step", "epoch", "TP_RANK", "DP_RANK", "stage"]),
    st.integers(0, 5),
    max_size=3,
)

_funcs = st.sampled_from(["mod.f", "mod.g", "pkg.h"])


@st.composite
def _records(draw):
    kind = draw(st.sampled_from(["entry", "exit", "var"]))
    ts = draw(st.integers(0, 10**9))
    pid = draw(st.integers(0, 3))
    tid = draw(st.integers(0, 2))
    meta = draw(_meta)
    if kind == "entry":
        args = draw(st.lists(_snapshots, max_size=3))
        return entry_record(ts, pid, tid, draw(_funcs), args, meta)
    if kind == "exit":
        return exit_record(ts, pid, tid, draw(_funcs), draw(_snapshots), meta=meta)
    return var_state_record(ts, pid, tid, "T", draw(st.sampled_from(["p0", "p1"])),
                            draw(st.sampled_from(["data", "grad"])), draw(_snapshots), meta)


@given(st.lists(_records(), max_size=20))
@settings(max_examples=100)
def test_round_trip_property(records):
    """serialize∘parse is the identity on anything this package writes."""
    text = serialize_trace(records)
    assert serialize_trace(parse_trace(io.StringIO(text))) == text


def test_round_trip_on_generated_file(clean_pair_dirs):
    path = clean_pair_dirs[0] / "trace_000.ndjson"
    text = path.read_text(encoding="utf-8")
    parsed = parse_trace(io.StringIO(text))
    assert serialize_trace(parsed) == text


def test_wire_field_names_exact(clean_pair_dirs):
    allowed = {"kind", "ts", "pid", "tid", "func", "args", "ret", "exc",
               "var_type", "var_id", "attr", "value", "meta", "schema"}
    for line in (clean_pair_dirs[0] / "trace_000.ndjson").read_text().splitlines():
        assert set(json.loads(line)) <= allowed
