import json
from pathlib import Path

import pytest

from traceguard import FaultKind, FaultSpec, InvalidConfig, RunConfig, TraceRun, generate
from traceguard.generator import API_WORKER_INIT, describe_faults
from traceguard.records import RecordKind


def _gen(tmp_path, name, **kwargs) -> TraceRun:
    cfg = RunConfig(**kwargs)
    out = generate(cfg, tmp_path / name)
    return TraceRun.from_dir(out)


def _dir_bytes(path: Path) -> dict[str, bytes]:
    return {f.name: f.read_bytes() for f in sorted(path.iterdir()) if f.is_file()}


def test_generation_is_deterministic(tmp_path):
    cfg = RunConfig(dp_ranks=2, tp_ranks=2, n_params=4, n_steps=3, seed=11)
    a = generate(cfg, tmp_path / "a")
    b = generate(RunConfig(dp_ranks=2, tp_ranks=2, n_params=4, n_steps=3, seed=11), tmp_path / "b")
    assert _dir_bytes(a) == _dir_bytes(b)


def test_process_count_and_manifest(tmp_path):
    cfg = RunConfig(dp_ranks=2, tp_ranks=3, n_params=2, n_steps=2, seed=0)
    out = generate(cfg, tmp_path / "run")
    files = sorted(p.name for p in out.glob("trace_*.ndjson"))
    assert len(files) == 6  # dp * tp processes, one file each
    manifest = json.loads((out / "run.json").read_text())
    assert manifest["schema"] == 1
    assert manifest["config"]["dp_ranks"] == 2
    assert manifest["run_id"].startswith("run-")


def _end_of_step_data(run: TraceRun):
    """(step, pid, var_id) -> last data digest, plus the replication flags."""
    state = {}
    flags = {}
    for r in run.records:
        if r.record_kind is not RecordKind.VAR_STATE:
            continue
        if r.attr_name == "data":
            state[(r.step, r.process_id, r.var_id)] = r.attr_value.digest
        if r.attr_name == "tensor_model_parallel":
            flags[r.var_id] = r.attr_value.value
    return state, flags


def test_clean_run_replication_structure(tmp_path):
    run = _gen(tmp_path, "clean", dp_ranks=2, tp_ranks=2, n_params=4,
               replicated_fraction=0.5, n_steps=3, seed=5)
    state, flags = _end_of_step_data(run)
    tp_of = {pid: pid % 2 for pid in run.process_ids}
    steps = sorted({s for s, _, _ in state})
    for s in steps:
        for var in flags:
            values = {pid: state[(s, pid, var)] for pid in run.process_ids}
            if not flags[var]:  # replicated: equal everywhere
                assert len(set(values.values())) == 1
            else:  # partitioned: equal within a tp rank, distinct across
                by_tp = {}
                for pid, v in values.items():
                    by_tp.setdefault(tp_of[pid], set()).add(v)
                assert all(len(v) == 1 for v in by_tp.values())
                assert len({v.pop() for v in by_tp.values()}) == 2


def test_clean_run_distinct_worker_seeds(tmp_path):
    run = _gen(tmp_path, "seeds", dp_ranks=2, tp_ranks=2, n_params=2, n_steps=3, seed=5)
    by_step = {}
    for r in run.records:
        if r.record_kind is RecordKind.FUNC_ENTRY and r.func_name == API_WORKER_INIT:
            by_step.setdefault(r.step, []).append(r.args[0].value)
    for step, seeds in by_step.items():
        assert len(seeds) == 4 and len(set(seeds)) == 4


def test_clean_run_zero_grad_precedes_backward(tmp_path):
    run = _gen(tmp_path, "order", dp_ranks=1, tp_ranks=1, n_params=2, n_steps=3, seed=5)
    for (pid, tid, step), names in _window_orders(run).items():
        assert names.index("optim.Optimizer.zero_grad") < names.index("loss.Tensor.backward")


def _window_orders(run: TraceRun):
    windows = {}
    for r in run.records:
        if r.record_kind is RecordKind.FUNC_ENTRY:
            windows.setdefault((r.process_id, r.thread_id, r.step), []).append(r.func_name)
    return windows


def test_every_step_span_updates_every_param(tmp_path):
    run = _gen(tmp_path, "updates", dp_ranks=1, tp_ranks=2, n_params=3, n_steps=2, seed=1)
    for span in run.spans:
        if span.func_name != "optim.Optimizer.step":
            continue
        touched = {c.var_id for c in span.children if not isinstance(c, type(span))}
        assert len(touched) == 3


@pytest.mark.parametrize("kind,inject", [
    (FaultKind.TP_DIVERGENCE, 2),
    (FaultKind.MISSING_ZERO_GRAD, 1),
    (FaultKind.FROZEN_OPTIMIZER, 2),
    (FaultKind.DUPLICATE_SEED, 1),
    (FaultKind.OUTPUT_TRUNCATION, 2),
    (FaultKind.DDP_DESYNC, 2),
])
def test_fault_visibility_and_no_early_effect(tmp_path, kind, inject):
    """Every fault changes some record at/after its step and nothing before."""
    base = dict(dp_ranks=2, tp_ranks=2, n_params=4, replicated_fraction=0.5,
                n_steps=4, seed=17)
    clean = _gen(tmp_path, f"clean_{kind.value}", **base)
    faulty = _gen(tmp_path, f"fault_{kind.value}", fault=FaultSpec(kind, inject), **base)

    clean_by_step = _records_by_step(clean)
    faulty_by_step = _records_by_step(faulty)
    for s in range(inject):
        assert clean_by_step[s] == faulty_by_step[s], f"step {s} altered before injection"
    assert any(
        clean_by_step[s] != faulty_by_step[s] for s in range(inject, base["n_steps"])
    ), "fault left no trace"


def _records_by_step(run: TraceRun):
    out = {}
    for r in run.records:
        out.setdefault(r.step, []).append(r.to_wire())
    return out


def test_extreme_imbalance_config(tmp_path):
    """One replicated parameter in 39 reproduces a 1:38 passing/failing split."""
    run = _gen(tmp_path, "imbalance", dp_ranks=1, tp_ranks=4, n_params=39,
               replicated_fraction=1 / 39, n_steps=2, seed=3)
    state, flags = _end_of_step_data(run)
    assert sum(1 for v in flags.values() if not v) == 1
    assert sum(1 for v in flags.values() if v) == 38


def test_invalid_configs_rejected(tmp_path):
    with pytest.raises(InvalidConfig):
        generate(RunConfig(dp_ranks=0), tmp_path / "x")
    with pytest.raises(InvalidConfig):
        generate(RunConfig(n_steps=0), tmp_path / "x")
    with pytest.raises(InvalidConfig):
        generate(RunConfig(fault=FaultSpec(FaultKind.TP_DIVERGENCE, 1), tp_ranks=1), tmp_path / "x")
    with pytest.raises(InvalidConfig):
        generate(RunConfig(fault=FaultSpec(FaultKind.DDP_DESYNC, 1), dp_ranks=1), tmp_path / "x")
    with pytest.raises(InvalidConfig):
        generate(RunConfig(fault=FaultSpec(FaultKind.MISSING_ZERO_GRAD, 9), n_steps=3), tmp_path / "x")
    with pytest.raises(InvalidConfig):
        generate(RunConfig(api_script=("fly",)), tmp_path / "x")
    with pytest.raises(InvalidConfig):
        generate(
            RunConfig(api_script=("forward", "step"),
                      fault=FaultSpec(FaultKind.MISSING_ZERO_GRAD, 1)),
            tmp_path / "x",
        )


def test_fault_spec_parsing():
    spec = FaultSpec.parse("TP_DIVERGENCE@2")
    assert spec.kind is FaultKind.TP_DIVERGENCE and spec.inject_step == 2
    with pytest.raises(InvalidConfig):
        FaultSpec.parse("TP_DIVERGENCE")
    with pytest.raises(InvalidConfig):
        FaultSpec.parse("NOT_A_FAULT@1")
    with pytest.raises(InvalidConfig):
        FaultSpec.parse("TP_DIVERGENCE@x")


def test_describe_faults_catalog():
    catalog = describe_faults()
    kinds = {c["kind"] for c in catalog}
    assert kinds == {k.value for k in FaultKind}
    by_kind = {c["kind"]: c for c in catalog}
    assert "APISequence" in by_kind["MISSING_ZERO_GRAD"]["expected_catcher"]
    assert "EventContain" in by_kind["FROZEN_OPTIMIZER"]["expected_catcher"]
    assert "APIOutput" in by_kind["OUTPUT_TRUNCATION"]["expected_catcher"]
    assert "Consistent" in by_kind["TP_DIVERGENCE"]["expected_catcher"]
    for c in catalog:
        assert c["description"] and c["alters"]
