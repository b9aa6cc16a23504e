from conftest import read_trace
from tracehook import Instrumentation, MetaCollector, set_meta

import demo_targets


def test_loop_index_heuristic_tracks_step(trace_dir):
    with Instrumentation(out_dir=trace_dir) as session:
        session.patch_namespaces(callables=["demo_targets.optimizer_step"])
        for step in range(3):
            demo_targets.optimizer_step()
    records = read_trace(trace_dir)
    steps = [r["meta"]["step"] for r in records if r["kind"] == "entry"]
    assert steps == [0, 1, 2]


def test_outermost_loop_wins():
    collector = MetaCollector()

    def inner():
        step = 99  # a shadowing inner local must not win
        return collector.collect(skip=1)

    for step in range(2, 3):
        meta = inner()
    assert meta["step"] == 2


def test_set_meta_overrides_heuristic(trace_dir):
    with Instrumentation(out_dir=trace_dir) as session:
        session.patch_namespaces(callables=["demo_targets.optimizer_step"])
        set_meta("stage", "training")
        set_meta("step", 41)
        for step in range(5):
            demo_targets.optimizer_step()
    records = read_trace(trace_dir)
    entries = [r for r in records if r["kind"] == "entry"]
    assert all(r["meta"]["stage"] == "training" for r in entries)
    assert all(r["meta"]["step"] == 41 for r in entries)


def test_no_loop_no_overrides_omits_step(trace_dir):
    with Instrumentation(out_dir=trace_dir) as session:
        session.patch_namespaces(callables=["demo_targets.helper"])
        demo_targets.helper()
    records = read_trace(trace_dir)
    assert all("step" not in r["meta"] for r in records)


def test_rank_keys_read_from_environment(monkeypatch):
    monkeypatch.setenv("TP_RANK", "3")
    monkeypatch.setenv("DP_RANK", "1")
    collector = MetaCollector()
    meta = collector.collect(skip=1)
    assert meta["TP_RANK"] == 3 and meta["DP_RANK"] == 1
