import json

from oracles import recount_report_groups
from traceguard.cli import main, render_report_summary
from traceguard.verifier import load_reports


def _gen(tmp_path, name, *extra):
    out = tmp_path / name
    rc = main(["gen", "--dp", "2", "--tp", "2", "--params", "4", "--steps", "4",
               "--seed", "5", "--out", str(out), *extra])
    assert rc == 0
    return out


def test_full_pipeline_exit_codes(tmp_path, capsys):
    clean_a = _gen(tmp_path, "clean_a")
    clean_b = _gen(tmp_path, "clean_b", "--seed", "6")
    inv_path = tmp_path / "invariants.json"
    assert main(["infer", str(clean_a), str(clean_b), "--out", str(inv_path)]) == 0
    assert inv_path.exists()

    held = _gen(tmp_path, "held", "--seed", "7")
    assert main(["check", str(held), "--invariants", str(inv_path)]) == 0

    faulty = _gen(tmp_path, "faulty", "--seed", "7", "--fault", "TP_DIVERGENCE@2")
    report_path = tmp_path / "reports.ndjson"
    rc = main(["check", str(faulty), "--invariants", str(inv_path),
               "--report", str(report_path)])
    assert rc == 1
    assert report_path.exists() and report_path.read_text().strip()

    capsys.readouterr()
    assert main(["report", str(report_path)]) == 0
    out = capsys.readouterr().out
    assert "violation" in out


def test_check_report_text_names_offending_clause(tmp_path, capsys):
    clean = _gen(tmp_path, "c")
    clean2 = _gen(tmp_path, "c2", "--seed", "8")
    inv_path = tmp_path / "inv.json"
    main(["infer", str(clean), str(clean2), "--out", str(inv_path)])
    faulty = _gen(tmp_path, "f", "--fault", "TP_DIVERGENCE@1")
    report_path = tmp_path / "r.ndjson"
    capsys.readouterr()
    rc = main(["check", str(faulty), "--invariants", str(inv_path),
               "--report", str(report_path), "--format", "ndjson"])
    assert rc == 1
    lines = load_reports(report_path)
    consistent = [l for l in lines if l["relation"] == "Consistent"]
    assert consistent
    clause_text = json.dumps(consistent[0]["clause"])
    assert "tensor_model_parallel" in clause_text or "TP_RANK" in clause_text


def test_report_grouping_matches_recount(tmp_path, capsys):
    clean = _gen(tmp_path, "rc")
    clean2 = _gen(tmp_path, "rc2", "--seed", "9")
    inv_path = tmp_path / "inv.json"
    main(["infer", str(clean), str(clean2), "--out", str(inv_path)])
    faulty = _gen(tmp_path, "rf", "--fault", "MISSING_ZERO_GRAD@1")
    report_path = tmp_path / "rr.ndjson"
    main(["check", str(faulty), "--invariants", str(inv_path), "--report", str(report_path)])

    lines = load_reports(report_path)
    tallies = recount_report_groups(lines)
    rendered = render_report_summary(lines)
    assert f"{len(lines)} violation(s) across {len(tallies)} invariant(s)" in rendered
    for (relation, text), count in tallies.items():
        assert f"{text}: {count} violation(s)" in rendered


def test_report_empty_file_says_no_violations(tmp_path, capsys):
    empty = tmp_path / "empty.ndjson"
    empty.write_text("")
    capsys.readouterr()
    assert main(["report", str(empty)]) == 0
    assert "no violations" in capsys.readouterr().out


def test_unknown_schema_is_refused(tmp_path):
    assert main(["gen", "--out", str(tmp_path / "x"), "--schema", "2"]) == 2


def test_bad_fault_spec_is_an_error(tmp_path):
    assert main(["gen", "--out", str(tmp_path / "x"), "--fault", "NOPE@1"]) == 2


def test_check_missing_invariant_file_is_an_error(tmp_path):
    run = _gen(tmp_path, "m")
    assert main(["check", str(run), "--invariants", str(tmp_path / "absent.json")]) == 2


def test_infer_cap_zero_writes_empty_list(tmp_path):
    clean = _gen(tmp_path, "z")
    inv_path = tmp_path / "inv.json"
    assert main(["infer", str(clean), "--out", str(inv_path), "--cap", "0"]) == 0
    obj = json.loads(inv_path.read_text())
    assert obj["count"] == 0 and obj["invariants"] == []


def test_infer_cap_exact_and_stable(tmp_path):
    a = _gen(tmp_path, "ca")
    b = _gen(tmp_path, "cb", "--seed", "11")
    p1, p2 = tmp_path / "i1.json", tmp_path / "i2.json"
    assert main(["infer", str(a), str(b), "--out", str(p1), "--cap", "7"]) == 0
    assert main(["infer", str(a), str(b), "--out", str(p2), "--cap", "7"]) == 0
    assert p1.read_bytes() == p2.read_bytes()
    assert json.loads(p1.read_text())["count"] == 7


def test_manifest_out_without_trace(tmp_path):
    clean = _gen(tmp_path, "mf")
    clean2 = _gen(tmp_path, "mf2", "--seed", "12")
    inv_path = tmp_path / "inv.json"
    main(["infer", str(clean), str(clean2), "--out", str(inv_path)])
    manifest_path = tmp_path / "manifest.json"
    assert main(["check", "--invariants", str(inv_path),
                 "--manifest-out", str(manifest_path)]) == 0
    obj = json.loads(manifest_path.read_text())
    assert obj["schema"] == 1
    assert ["nn.Parameter", "data"] in obj["variables"]
    assert "step" in obj["meta_keys"]


def test_selective_emission_round_trip(tmp_path):
    """A manifest-restricted trace is smaller but still checkable against the
    invariants that produced the manifest."""
    a = _gen(tmp_path, "sa")
    b = _gen(tmp_path, "sb", "--seed", "21")
    inv_path = tmp_path / "inv.json"
    main(["infer", str(a), str(b), "--out", str(inv_path), "--relations", "Consistent"])
    manifest_path = tmp_path / "sel.json"
    assert main(["check", "--invariants", str(inv_path),
                 "--manifest-out", str(manifest_path)]) == 0

    full = _gen(tmp_path, "sf", "--seed", "22", "--fault", "TP_DIVERGENCE@1")
    selective = tmp_path / "ss"
    assert main(["gen", "--dp", "2", "--tp", "2", "--params", "4", "--steps", "4",
                 "--seed", "22", "--fault", "TP_DIVERGENCE@1",
                 "--manifest", str(manifest_path), "--out", str(selective)]) == 0

    full_size = sum(len(f.read_bytes()) for f in full.glob("trace_*.ndjson"))
    sel_size = sum(len(f.read_bytes()) for f in selective.glob("trace_*.ndjson"))
    assert sel_size < full_size  # restrained emission is strictly lighter

    manifest = json.loads(manifest_path.read_text())
    allowed_attrs = {a for _, a in manifest["variables"]} | set(manifest["condition_fields"])
    for f in selective.glob("trace_*.ndjson"):
        for line in f.read_text().splitlines()[1:]:
            obj = json.loads(line)
            assert obj["kind"] == "var"  # no API invariants deployed, none emitted
            assert obj["attr"] in allowed_attrs
            assert set(obj["meta"]) <= set(manifest["meta_keys"])

    assert main(["check", str(selective), "--invariants", str(inv_path)]) == 1


def test_gen_list_faults(capsys):
    assert main(["gen", "--list-faults"]) == 0
    catalog = json.loads(capsys.readouterr().out)
    assert {c["kind"] for c in catalog} >= {"TP_DIVERGENCE", "DDP_DESYNC"}


def test_online_mode_flag(tmp_path):
    clean = _gen(tmp_path, "oa")
    clean2 = _gen(tmp_path, "ob", "--seed", "13")
    inv_path = tmp_path / "inv.json"
    main(["infer", str(clean), str(clean2), "--out", str(inv_path)])
    faulty = _gen(tmp_path, "of", "--fault", "DDP_DESYNC@2")
    r1, r2 = tmp_path / "r1.ndjson", tmp_path / "r2.ndjson"
    assert main(["check", str(faulty), "--invariants", str(inv_path),
                 "--mode", "online", "--report", str(r1)]) == 1
    assert main(["check", str(faulty), "--invariants", str(inv_path),
                 "--mode", "batch", "--report", str(r2)]) == 1
    key = lambda l: (l["invariant"], l["step"], l["group"])
    assert sorted(map(key, load_reports(r1))) == sorted(map(key, load_reports(r2)))
