import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from traceguard import RunConfig, TraceRun, generate
from traceguard.relations import Example, RecordView, RelationKind, Verdict


def make_view(fields: dict, digests=()) -> RecordView:
    return RecordView.make(fields, set(digests))


def make_example(*record_fields: dict, passing: bool = True, digests=()) -> Example:
    """A bare example carrying only field views; enough for deduction."""
    views = tuple(make_view(f, digests) for f in record_fields)
    return Example(
        kind=RelationKind("Consistent"),
        descriptors=(),
        entities=(),
        views=views,
        verdict=Verdict.PASSING if passing else Verdict.FAILING,
    )


@pytest.fixture(scope="session")
def clean_pair_dirs(tmp_path_factory):
    """Two clean tp=4, dp=2 runs: the main inference input for tests."""
    root = tmp_path_factory.mktemp("clean_pair")
    dirs = []
    for seed in (0, 1):
        cfg = RunConfig(
            dp_ranks=2, tp_ranks=4, n_params=8, replicated_fraction=0.25,
            n_steps=4, seed=seed,
        )
        dirs.append(generate(cfg, root / f"clean{seed}"))
    return dirs


@pytest.fixture(scope="session")
def clean_pair_runs(clean_pair_dirs):
    return [TraceRun.from_dir(d) for d in clean_pair_dirs]


@pytest.fixture(scope="session")
def clean_invariants(clean_pair_runs):
    from traceguard import infer

    return infer(clean_pair_runs).invariants
