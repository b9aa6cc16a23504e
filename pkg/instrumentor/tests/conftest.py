import json
from pathlib import Path

import pytest
import torch
import torch.nn as nn

from tracehook import Instrumentation

TOY_PATCHES = [
    "torch.optim.SGD.step",
    "torch.optim.Optimizer.zero_grad",
    "torch.Tensor.backward",
]


def toy_training(seed: int = 0, n_steps: int = 4):
    """A 2-layer model trained for a few steps on fixed random data."""
    torch.manual_seed(seed)
    model = nn.Sequential(nn.Linear(4, 8), nn.Linear(8, 2))
    opt = torch.optim.SGD(model.parameters(), lr=0.1)
    data = torch.randn(16, 4)
    target = torch.randn(16, 2)
    for step in range(n_steps):
        opt.zero_grad()
        out = model(data)
        loss = ((out - target) ** 2).mean()
        loss.backward()
        opt.step()
    return model


def run_instrumented(out_dir: Path, seed: int = 0, n_steps: int = 4, **session_kwargs):
    session = Instrumentation(out_dir=out_dir, **session_kwargs)
    with session:
        session.patch_namespaces(callables=TOY_PATCHES)
        model = toy_training(seed=seed, n_steps=n_steps)
    return model


def read_trace(out_dir: Path) -> list[dict]:
    records = []
    for f in sorted(out_dir.glob("trace_*.ndjson")):
        lines = f.read_text(encoding="utf-8").splitlines()
        assert json.loads(lines[0]) == {"kind": "header", "schema": 1}
        records.extend(json.loads(l) for l in lines[1:])
    return records


@pytest.fixture
def trace_dir(tmp_path):
    return tmp_path / "trace"
