"""Command-line entry point: gen, infer, check, report.

Exit codes for ``check``: 0 means no violations, 1 means violations were
found, 2 means the run could not be checked (parse error, schema mismatch,
bad paths). Other subcommands use 0/2.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import defaultdict
from pathlib import Path

from .errors import TraceGuardError
from .events import TraceRun
from .generator import DEFAULT_SCRIPT, FaultSpec, RunConfig, describe_faults, generate
from .inference import (
    InferBudget,
    dump_invariants,
    infer,
    invariant_file_obj,
    load_invariants,
    select_top,
)
from .records import SCHEMA_VERSION
from .relations import DEFAULT_API_BLOCKLIST, RELATIONS
from .verifier import check_stream, load_reports, required_descriptors, write_reports


def _add_schema_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--schema", type=int, default=SCHEMA_VERSION,
        help="trace schema version to accept (only %(default)s is supported)",
    )


def _check_schema(args) -> None:
    if args.schema != SCHEMA_VERSION:
        raise TraceGuardError(
            f"schema version {args.schema} is not supported (expected {SCHEMA_VERSION})"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="traceguard",
        description="Mine training invariants from traces and check runs against them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic training-run trace")
    p_gen.add_argument("--dp", type=int, default=2, help="data-parallel ranks")
    p_gen.add_argument("--tp", type=int, default=1, help="tensor-parallel ranks")
    p_gen.add_argument("--params", type=int, default=16, help="number of parameters")
    p_gen.add_argument("--steps", type=int, default=6, help="training steps")
    p_gen.add_argument(
        "--replicated-fraction", type=float, default=0.5,
        help="fraction of parameters replicated across tensor-parallel ranks",
    )
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument(
        "--fault", type=str, default=None, metavar="KIND@STEP",
        help="inject a fault, e.g. TP_DIVERGENCE@2 (see gen --list-faults)",
    )
    p_gen.add_argument(
        "--script", type=str, default=",".join(DEFAULT_SCRIPT),
        help="comma-separated per-step API script",
    )
    p_gen.add_argument("--no-probe", action="store_true", help="omit the probe API")
    p_gen.add_argument(
        "--manifest", type=Path, default=None,
        help="selection manifest (from check --manifest-out); restricts emission "
             "to the APIs/variables/meta keys the deployed invariants need",
    )
    p_gen.add_argument("--list-faults", action="store_true", help="print the fault catalog and exit")
    p_gen.add_argument("--out", type=Path, help="output trace directory")
    _add_schema_flag(p_gen)

    p_infer = sub.add_parser("infer", help="infer invariants from trace runs")
    p_infer.add_argument("trace_dirs", nargs="+", type=Path)
    p_infer.add_argument("--out", type=Path, required=True, help="invariant file to write")
    p_infer.add_argument(
        "--relations", type=str, default=None,
        help=f"comma-separated relation names (default: all of {sorted(RELATIONS)})",
    )
    p_infer.add_argument("--cap", type=int, default=None, help="keep only the top-N invariants")
    p_infer.add_argument(
        "--jobs", type=int, default=os.cpu_count() or 1,
        help="parallel workers across relations (default: available parallelism)",
    )
    p_infer.add_argument("--strategy", choices=("augment", "split"), default="augment")
    p_infer.add_argument("--max-examples", type=int, default=10_000)
    p_infer.add_argument("--max-pairs", type=int, default=10_000)
    p_infer.add_argument("--max-safety-evals", type=int, default=1_000)
    p_infer.add_argument(
        "--api-blocklist", type=str, default=",".join(DEFAULT_API_BLOCKLIST),
        help="comma-separated substrings; matching APIs are skipped",
    )
    _add_schema_flag(p_infer)

    p_check = sub.add_parser("check", help="check a trace run against invariants")
    p_check.add_argument("trace_dir", nargs="?", type=Path)
    p_check.add_argument("--invariants", type=Path, required=True)
    p_check.add_argument("--report", type=Path, default=None, help="write reports as ndjson")
    p_check.add_argument("--format", choices=("text", "ndjson"), default="text")
    p_check.add_argument("--mode", choices=("online", "batch"), default="batch")
    p_check.add_argument(
        "--manifest-out", type=Path, default=None,
        help="write the selective-instrumentation manifest for these invariants",
    )
    _add_schema_flag(p_check)

    p_report = sub.add_parser("report", help="summarize a violation report file")
    p_report.add_argument("report_file", type=Path)
    _add_schema_flag(p_report)

    return parser


def cmd_gen(args) -> int:
    if args.list_faults:
        print(json.dumps(describe_faults(), indent=2, sort_keys=True))
        return 0
    if args.out is None:
        print("gen: --out is required", file=sys.stderr)
        return 2
    fault = FaultSpec.parse(args.fault) if args.fault else None
    selection = None
    if args.manifest is not None:
        selection = json.loads(args.manifest.read_text(encoding="utf-8"))
    config = RunConfig(
        dp_ranks=args.dp,
        tp_ranks=args.tp,
        n_params=args.params,
        replicated_fraction=args.replicated_fraction,
        n_steps=args.steps,
        api_script=tuple(s for s in args.script.split(",") if s),
        emit_probe=not args.no_probe,
        seed=args.seed,
        fault=fault,
        selection=selection,
    )
    generate(config, args.out)
    print(f"wrote {config.run_id()} to {args.out}")
    return 0


def cmd_infer(args) -> int:
    missing = [str(d) for d in args.trace_dirs if not d.is_dir()]
    if missing:
        print(f"infer: not a trace directory: {', '.join(missing)}", file=sys.stderr)
        return 2
    runs = [TraceRun.from_dir(d) for d in args.trace_dirs]
    budget = InferBudget(
        max_pairs_per_relation=args.max_pairs,
        max_examples_per_hypothesis=args.max_examples,
        max_safety_evals=args.max_safety_evals,
    )
    relations = args.relations.split(",") if args.relations else None
    blocklist = tuple(s for s in args.api_blocklist.split(",") if s)
    result = infer(
        runs, relations=relations, budget=budget, api_blocklist=blocklist,
        strategy=args.strategy, jobs=args.jobs,
    )
    invariants = result.invariants
    if args.cap is not None:
        invariants = select_top(invariants, args.cap)
    obj = invariant_file_obj(
        invariants, run_ids=result.run_ids,
        budget_exhausted=result.budget_exhausted, strategy=args.strategy,
    )
    dump_invariants(obj, args.out)
    print(
        f"{len(invariants)} invariant(s) written to {args.out} "
        f"({result.superficial} superficial hypothesis(es) dropped)"
    )
    return 0


def cmd_check(args) -> int:
    if not args.invariants.is_file():
        print(f"check: invariant file not found: {args.invariants}", file=sys.stderr)
        return 2
    if args.trace_dir is not None and not args.trace_dir.is_dir():
        print(f"check: not a trace directory: {args.trace_dir}", file=sys.stderr)
        return 2
    invariants = load_invariants(args.invariants)
    if args.manifest_out is not None:
        manifest = required_descriptors(invariants)
        args.manifest_out.write_text(
            json.dumps(manifest.to_wire(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        if args.trace_dir is None:
            return 0
    if args.trace_dir is None:
        print("check: a trace directory is required", file=sys.stderr)
        return 2

    run = TraceRun.from_dir(args.trace_dir)
    records = run.merged_records()
    if args.mode == "online":
        reports = list(check_stream(invariants, records, mode="online"))
        summary = None
    else:
        reports, summary = check_stream(invariants, records, mode="batch")

    if args.report is not None:
        write_reports(reports, args.report)
    if args.format == "ndjson":
        for r in reports:
            print(json.dumps(r.to_wire(), sort_keys=True, separators=(",", ":")))
    else:
        if not reports:
            print("no violations")
        for r in reports:
            print(f"[step {r.detection_step}] {r.summary}")
        if summary is not None:
            print(
                f"checked {summary.checked_units} unit(s); "
                f"{summary.reports} violation report(s)"
            )
    return 1 if reports else 0


def cmd_report(args) -> int:
    lines = load_reports(args.report_file)
    print(render_report_summary(lines))
    return 0


def render_report_summary(lines: list[dict]) -> str:
    """Group violations by invariant and subject, with first-detection steps."""
    if not lines:
        return "no violations"
    grouped: dict[tuple[str, str], dict] = defaultdict(
        lambda: {"count": 0, "groups": defaultdict(int), "first_step": None}
    )
    for obj in lines:
        key = (obj["relation"], obj["invariant_text"])
        g = grouped[key]
        g["count"] += 1
        g["groups"][obj.get("group", "")] += 1
        step = obj.get("detection_step")
        if g["first_step"] is None or (
            isinstance(step, int) and isinstance(g["first_step"], int) and step < g["first_step"]
        ):
            g["first_step"] = step
    out = [f"{len(lines)} violation(s) across {len(grouped)} invariant(s)"]
    for (relation, text) in sorted(grouped):
        g = grouped[(relation, text)]
        subjects = ", ".join(
            f"{name or '<run>'} x{n}" for name, n in sorted(g["groups"].items())
        )
        out.append(
            f"  {text}: {g['count']} violation(s), first at step {g['first_step']}; {subjects}"
        )
    return "\n".join(out)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _check_schema(args)
        if args.command == "gen":
            return cmd_gen(args)
        if args.command == "infer":
            return cmd_infer(args)
        if args.command == "check":
            return cmd_check(args)
        if args.command == "report":
            return cmd_report(args)
        parser.error(f"unknown command {args.command!r}")
    except (TraceGuardError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
