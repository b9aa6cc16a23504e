"""Estimator-style facade: fit invariants on clean runs, predict violations.

``InvariantMiner`` follows the scikit-learn protocol (``fit``/``predict``,
``get_params``/``set_params``) so the engine composes with pipelines and
model-selection tooling; ``fit`` consumes a list of trace runs (paths or
parsed runs) and ``predict`` returns the violation reports per run.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from sklearn.base import BaseEstimator

from .inference import (
    InferBudget,
    Invariant,
    dump_invariants,
    infer,
    invariant_file_obj,
    load_invariants,
    select_top,
)
from .relations import DEFAULT_API_BLOCKLIST
from .validation import as_trace_runs, meta_key_problems
from .verifier import ViolationReport, check_stream


class InvariantMiner(BaseEstimator):
    """Learns training invariants from traces and checks new traces with them.

    Parameters mirror the inference budget and knobs; fitted state lives in
    ``invariants_`` and friends, per scikit-learn convention.
    """

    def __init__(
        self,
        relations: Sequence[str] | None = None,
        max_examples: int = 10_000,
        max_pairs: int = 10_000,
        max_safety_evals: int = 1_000,
        strategy: str = "augment",
        api_blocklist: tuple[str, ...] = DEFAULT_API_BLOCKLIST,
        cap: int | None = None,
        jobs: int = 1,
    ):
        self.relations = relations
        self.max_examples = max_examples
        self.max_pairs = max_pairs
        self.max_safety_evals = max_safety_evals
        self.strategy = strategy
        self.api_blocklist = api_blocklist
        self.cap = cap
        self.jobs = jobs

    # -- fitting -----------------------------------------------------------

    def fit(self, X, y=None) -> "InvariantMiner":
        """Infer invariants from one or more clean trace runs."""
        runs = as_trace_runs(X)
        problems = meta_key_problems(runs)
        if problems:
            raise ValueError("; ".join(problems))
        budget = InferBudget(
            max_pairs_per_relation=self.max_pairs,
            max_examples_per_hypothesis=self.max_examples,
            max_safety_evals=self.max_safety_evals,
        )
        result = infer(
            runs,
            relations=self.relations,
            budget=budget,
            api_blocklist=tuple(self.api_blocklist),
            strategy=self.strategy,
            jobs=self.jobs,
        )
        invariants = result.invariants
        if self.cap is not None:
            invariants = select_top(invariants, self.cap)
        self.invariants_ = invariants
        self.superficial_ = result.superficial
        self.budget_exhausted_ = result.budget_exhausted
        self.run_ids_ = result.run_ids
        self.n_invariants_ = len(invariants)
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "invariants_"):
            raise RuntimeError("this InvariantMiner instance is not fitted yet")

    # -- prediction ---------------------------------------------------------

    def predict(self, X) -> list[list[ViolationReport]]:
        """Violation reports per run; an empty list means the run looks clean."""
        self._check_fitted()
        runs = as_trace_runs(X)
        out: list[list[ViolationReport]] = []
        for run in runs:
            reports, _summary = check_stream(self.invariants_, run.merged_records())
            out.append(reports)
        return out

    def violation_counts(self, X) -> list[int]:
        return [len(reports) for reports in self.predict(X)]

    # -- persistence ----------------------------------------------------------

    def save_invariants(self, path: str | Path) -> None:
        self._check_fitted()
        obj = invariant_file_obj(
            self.invariants_,
            run_ids=self.run_ids_,
            budget_exhausted=self.budget_exhausted_,
            strategy=self.strategy,
        )
        dump_invariants(obj, path)

    def load_fitted(self, path: str | Path) -> "InvariantMiner":
        """Populate fitted state from an invariant file."""
        invariants: list[Invariant] = load_invariants(path)
        self.invariants_ = invariants
        self.superficial_ = 0
        self.budget_exhausted_ = False
        self.run_ids_ = []
        self.n_invariants_ = len(invariants)
        return self
