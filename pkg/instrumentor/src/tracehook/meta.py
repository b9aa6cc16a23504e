"""Meta-variable collection: loop indices, ranks, and explicit overrides.

The step heuristic walks the call stack outward and takes the outermost
integer local with a loop-index name; that is usually the training-loop
counter. ``set_meta`` overrides always win, and distributed rank keys are
read from the environment when present.
"""

from __future__ import annotations

import os
import sys
from typing import Any

STEP_NAMES = ("step", "global_step", "iteration", "it")
EPOCH_NAMES = ("epoch",)
RANK_ENV_KEYS = ("RANK", "LOCAL_RANK", "TP_RANK", "DP_RANK")


class MetaCollector:
    def __init__(self, step_names=STEP_NAMES, epoch_names=EPOCH_NAMES):
        self.step_names = tuple(step_names)
        self.epoch_names = tuple(epoch_names)
        self.overrides: dict[str, Any] = {}
        self._env_ranks = {
            key: int(os.environ[key])
            for key in RANK_ENV_KEYS
            if os.environ.get(key, "").lstrip("-").isdigit()
        }

    def set_meta(self, key: str, value: Any) -> None:
        self.overrides[key] = value

    def _scan_stack(self, skip: int) -> dict[str, Any]:
        found: dict[str, Any] = {}
        frame = sys._getframe(skip)
        while frame is not None:
            for name, value in frame.f_locals.items():
                if not isinstance(value, int) or isinstance(value, bool):
                    continue
                if name in self.step_names:
                    found["step"] = value  # outer frames overwrite: outermost loop wins
                elif name in self.epoch_names:
                    found["epoch"] = value
            frame = frame.f_back
        return found

    def collect(self, skip: int = 2) -> dict[str, Any]:
        meta = dict(self._env_ranks)
        meta.update(self._scan_stack(skip))
        meta.update(self.overrides)
        return meta
