"""Run a training script under instrumentation: ``tracehook run script.py``."""

from __future__ import annotations

import argparse
import json
import runpy
import sys
from pathlib import Path

from .session import Instrumentation


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracehook")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a Python script instrumented")
    p_run.add_argument("--out", type=Path, default=None,
                       help="trace output directory (or set TRACEHOOK_OUT)")
    p_run.add_argument("--manifest", type=Path, default=None,
                       help="selection manifest restricting what is emitted")
    p_run.add_argument("--modules", type=str, default="",
                       help="comma-separated modules whose public callables are wrapped")
    p_run.add_argument("--patch", type=str, default="",
                       help="comma-separated dotted callables to wrap explicitly")
    p_run.add_argument("--no-sampling", action="store_true",
                       help="disable the per-step state dump")
    p_run.add_argument("script", type=Path)
    p_run.add_argument("script_args", nargs=argparse.REMAINDER)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    manifest = None
    if args.manifest is not None:
        manifest = json.loads(args.manifest.read_text(encoding="utf-8"))
    session = Instrumentation(
        out_dir=args.out, manifest=manifest, sampling=not args.no_sampling
    )
    modules = [m for m in args.modules.split(",") if m]
    callables = [c for c in args.patch.split(",") if c]
    apis = None
    if manifest is not None and manifest.get("apis"):
        apis = list(manifest["apis"])
    old_argv = sys.argv
    with session:
        session.patch_namespaces(modules=modules, apis=apis, callables=callables)
        sys.argv = [str(args.script), *args.script_args]
        try:
            runpy.run_path(str(args.script), run_name="__main__")
        finally:
            sys.argv = old_argv
    return 0


if __name__ == "__main__":
    sys.exit(main())
