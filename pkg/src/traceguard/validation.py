"""Input validation helpers for estimator and CLI entry points."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Sequence

from .events import TraceRun


def as_trace_run(obj: Any) -> TraceRun:
    """Coerce a run directory path or TraceRun into a TraceRun."""
    if isinstance(obj, TraceRun):
        return obj
    if isinstance(obj, (str, Path)):
        p = Path(obj)
        if not p.is_dir():
            raise ValueError(f"trace run path {p} is not a directory")
        return TraceRun.from_dir(p)
    raise TypeError(
        f"expected a TraceRun or a run directory path, got {type(obj).__name__}"
    )


def as_trace_runs(X: Any) -> list[TraceRun]:
    if isinstance(X, (TraceRun, str, Path)):
        X = [X]
    if not isinstance(X, (list, tuple)):
        raise TypeError("X must be a run, a run path, or a sequence of those")
    runs = [as_trace_run(x) for x in X]
    if not runs:
        raise ValueError("at least one trace run is required")
    return runs


def meta_key_problems(runs: Sequence[TraceRun]) -> list[str]:
    """Spelling inconsistencies in meta-variable keys across a run set.

    Keys must be spelled identically everywhere; two keys differing only in
    case are almost certainly the same variable emitted inconsistently.
    """
    problems: list[str] = []
    for run in runs:
        by_fold: dict[str, set[str]] = {}
        for k in run.meta_keys:
            by_fold.setdefault(k.casefold(), set()).add(k)
        for spellings in by_fold.values():
            if len(spellings) > 1:
                problems.append(
                    f"run {run.run_id!r}: meta keys spelled inconsistently: "
                    + ", ".join(sorted(spellings))
                )
    return problems
