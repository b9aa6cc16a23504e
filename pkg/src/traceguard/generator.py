"""Synthetic training-run traces with injectable silent faults.

The generator models a data/tensor-parallel training loop at desk scale: a
grid of dp*tp processes, a set of parameters that are either replicated
across tensor-parallel ranks or partitioned, and a per-step API script.
Weight evolution is a deterministic hash chain; the engine only ever compares
digests, so actual numerics are irrelevant. Runs are byte-reproducible from
their config.

Clean runs hold, by construction: replicated-parameter digests agree across
all ranks each step, partitioned ones agree across data-parallel ranks,
every optimizer-step span contains parameter updates, gradient clearing
precedes the backward pass, and loader seeds are distinct per worker.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable

from .errors import InvalidConfig
from .records import TraceRecord, entry_record, exit_record, iter_trace_lines, var_state_record
from .snapshots import boolean, none_value, scalar, synthetic_digest

PARAM_TYPE = "nn.Parameter"

API_PROBE = "cuda.runtime.is_available"
API_WORKER_INIT = "data.DataLoader.worker_init"
API_COLLATE = "data.Processor.collate"
API_ZERO_GRAD = "optim.Optimizer.zero_grad"
API_FORWARD = "model.Module.forward"
API_BACKWARD = "loss.Tensor.backward"
API_STEP = "optim.Optimizer.step"
API_ADAMW = "optim.functional.adamw"

BATCH_SHAPE = (32, 16)
ACT_SHAPE = (32, 8)
DTYPE = "float32"
LEARNING_RATE = 0.001

DEFAULT_SCRIPT = ("worker_init", "collate", "zero_grad", "forward", "backward", "step")
KNOWN_SCRIPT_STEPS = frozenset(DEFAULT_SCRIPT)


class FaultKind(str, Enum):
    TP_DIVERGENCE = "TP_DIVERGENCE"
    MISSING_ZERO_GRAD = "MISSING_ZERO_GRAD"
    FROZEN_OPTIMIZER = "FROZEN_OPTIMIZER"
    DUPLICATE_SEED = "DUPLICATE_SEED"
    OUTPUT_TRUNCATION = "OUTPUT_TRUNCATION"
    DDP_DESYNC = "DDP_DESYNC"


@dataclass(frozen=True)
class FaultSpec:
    kind: FaultKind
    inject_step: int

    def to_wire(self) -> dict:
        return {"kind": self.kind.value, "inject_step": self.inject_step}

    @staticmethod
    def parse(text: str) -> "FaultSpec":
        """Parse the CLI form KIND@STEP, e.g. TP_DIVERGENCE@2."""
        kind_s, sep, step_s = text.partition("@")
        if not sep:
            raise InvalidConfig(f"fault spec {text!r} must look like KIND@STEP")
        try:
            kind = FaultKind(kind_s)
        except ValueError:
            raise InvalidConfig(
                f"unknown fault kind {kind_s!r}; known: {[k.value for k in FaultKind]}"
            ) from None
        try:
            step = int(step_s)
        except ValueError:
            raise InvalidConfig(f"fault step {step_s!r} is not an integer") from None
        return FaultSpec(kind, step)


@dataclass
class RunConfig:
    dp_ranks: int = 2
    tp_ranks: int = 1
    n_params: int = 16
    replicated_fraction: float = 0.5
    n_steps: int = 6
    api_script: tuple[str, ...] = DEFAULT_SCRIPT
    emit_probe: bool = True
    seed: int = 0
    fault: FaultSpec | None = None
    # selective emission: a selection manifest (wire form) restricting which
    # APIs, variable attributes, and meta keys are written
    selection: dict | None = None

    def validate(self) -> None:
        if self.dp_ranks < 1 or self.tp_ranks < 1:
            raise InvalidConfig("dp_ranks and tp_ranks must be >= 1")
        if self.n_params < 1:
            raise InvalidConfig("n_params must be >= 1")
        if self.n_steps < 1:
            raise InvalidConfig("n_steps must be >= 1")
        if not 0.0 <= self.replicated_fraction <= 1.0:
            raise InvalidConfig("replicated_fraction must be within [0, 1]")
        unknown = [s for s in self.api_script if s not in KNOWN_SCRIPT_STEPS]
        if unknown:
            raise InvalidConfig(f"unknown api_script entries {unknown}")
        if self.fault is not None:
            f = self.fault
            if not 0 <= f.inject_step < self.n_steps:
                raise InvalidConfig(
                    f"inject_step {f.inject_step} outside [0, {self.n_steps})"
                )
            needs = {
                FaultKind.MISSING_ZERO_GRAD: "zero_grad",
                FaultKind.FROZEN_OPTIMIZER: "step",
                FaultKind.DUPLICATE_SEED: "worker_init",
                FaultKind.OUTPUT_TRUNCATION: "collate",
            }.get(f.kind)
            if needs and needs not in self.api_script:
                raise InvalidConfig(f"fault {f.kind.value} requires {needs!r} in api_script")
            if f.kind is FaultKind.TP_DIVERGENCE and self.tp_ranks < 2:
                raise InvalidConfig("TP_DIVERGENCE requires tp_ranks >= 2")
            if f.kind is FaultKind.DDP_DESYNC and self.dp_ranks < 2:
                raise InvalidConfig("DDP_DESYNC requires dp_ranks >= 2")

    @property
    def n_replicated(self) -> int:
        return max(0, min(self.n_params, round(self.replicated_fraction * self.n_params)))

    def to_wire(self) -> dict:
        obj = {
            "dp_ranks": self.dp_ranks,
            "tp_ranks": self.tp_ranks,
            "n_params": self.n_params,
            "replicated_fraction": self.replicated_fraction,
            "n_steps": self.n_steps,
            "api_script": list(self.api_script),
            "emit_probe": self.emit_probe,
            "seed": self.seed,
            "fault": self.fault.to_wire() if self.fault else None,
            "selection": self.selection,
        }
        return obj

    def run_id(self) -> str:
        blob = json.dumps(self.to_wire(), sort_keys=True, separators=(",", ":"))
        return "run-" + hashlib.sha256(blob.encode()).hexdigest()[:12]


def _param_shape(i: int) -> tuple[int, int]:
    return (8 + (i % 8), 4)


class _ProcessEmitter:
    """Builds the record stream of a single training process."""

    def __init__(self, cfg: RunConfig, dp: int, tp: int):
        self.cfg = cfg
        self.dp = dp
        self.tp = tp
        self.pid = dp * cfg.tp_ranks + tp
        self.tid = 0
        self.ts = 0
        self.step = 0
        self.records: list[TraceRecord] = []
        sel = cfg.selection
        if sel is None:
            self._sel_apis = None
            self._sel_attrs = None
            self._sel_meta = None
        else:
            self._sel_apis = set(sel.get("apis", ()))
            self._sel_attrs = {
                attr for var_type, attr in sel.get("variables", ())
                if var_type == PARAM_TYPE
            } | set(sel.get("condition_fields", ()))
            self._sel_meta = set(sel.get("meta_keys", ()))

    def _api_selected(self, func: str) -> bool:
        return self._sel_apis is None or func in self._sel_apis

    def _attr_selected(self, attr: str) -> bool:
        return self._sel_attrs is None or attr in self._sel_attrs

    # -- fault helpers -------------------------------------------------
    def _fault_active(self, kind: FaultKind) -> bool:
        f = self.cfg.fault
        return f is not None and f.kind is kind and self.step >= f.inject_step

    # -- digests --------------------------------------------------------
    def _data_digest(self, i: int):
        cfg = self.cfg
        step = self.step
        if self._fault_active(FaultKind.FROZEN_OPTIMIZER):
            step = cfg.fault.inject_step - 1  # weights stuck at the last good update
        replicated = i < cfg.n_replicated
        if replicated:
            group = "shared"
            if self._fault_active(FaultKind.TP_DIVERGENCE) and self.tp > 0:
                # clipping skipped on non-first ranks: they agree with each
                # other but diverge from rank 0
                group = "tp-unclipped"
        else:
            group = f"tp{self.tp}"
        ddp = ""
        if self._fault_active(FaultKind.DDP_DESYNC) and self.dp > 0:
            ddp = f"|desync-dp{self.dp}"
        key = f"data|{cfg.seed}|p{i}|s{step}|{group}{ddp}"
        return synthetic_digest(key, _param_shape(i), DTYPE)

    def _grad_digest(self, i: int):
        cfg = self.cfg
        replicated = i < cfg.n_replicated
        group = "shared" if replicated else f"tp{self.tp}"
        accum = "|accum" if self._fault_active(FaultKind.MISSING_ZERO_GRAD) else ""
        key = f"grad|{cfg.seed}|p{i}|s{self.step}|{group}{accum}"
        return synthetic_digest(key, _param_shape(i), DTYPE)

    def _grad_zero_digest(self, i: int):
        return synthetic_digest(f"gradzero|{self.cfg.seed}|p{i}", _param_shape(i), DTYPE)

    def _batch_digest(self):
        return synthetic_digest(
            f"batch|{self.cfg.seed}|dp{self.dp}|s{self.step}", BATCH_SHAPE, DTYPE
        )

    def _collated_digest(self):
        if self._fault_active(FaultKind.OUTPUT_TRUNCATION):
            # only the first sample survives collation
            return synthetic_digest(
                f"collated|{self.cfg.seed}|dp{self.dp}|s{self.step}|trunc",
                (1, BATCH_SHAPE[1]), DTYPE,
            )
        return synthetic_digest(
            f"collated|{self.cfg.seed}|dp{self.dp}|s{self.step}", BATCH_SHAPE, DTYPE
        )

    def _act_digest(self):
        return synthetic_digest(
            f"act|{self.cfg.seed}|dp{self.dp}|s{self.step}", ACT_SHAPE, DTYPE
        )

    def _worker_seed(self) -> int:
        cfg = self.cfg
        if self._fault_active(FaultKind.DUPLICATE_SEED):
            return cfg.seed + 104729 * self.step + 1  # rank term lost
        return cfg.seed + 104729 * self.step + 7919 * self.pid + 1

    # -- record emission -------------------------------------------------
    def _meta(self) -> dict[str, Any]:
        meta = {
            "step": self.step,
            "epoch": 0,
            "stage": "training",
            "TP_RANK": self.tp,
            "DP_RANK": self.dp,
        }
        if self._sel_meta is not None:
            meta = {k: v for k, v in meta.items() if k in self._sel_meta}
        return meta

    def _tick(self) -> int:
        self.ts += 1000
        return self.ts

    def _entry(self, func, args=()):
        if not self._api_selected(func):
            return
        self.records.append(
            entry_record(self._tick(), self.pid, self.tid, func, args, self._meta())
        )

    def _exit(self, func, ret=None):
        if not self._api_selected(func):
            return
        self.records.append(
            exit_record(self._tick(), self.pid, self.tid, func, ret, meta=self._meta())
        )

    def _var(self, i: int, attr: str, value):
        if not self._attr_selected(attr):
            return
        self.records.append(
            var_state_record(
                self._tick(), self.pid, self.tid, PARAM_TYPE, f"param{i:03d}",
                attr, value, self._meta(),
            )
        )

    # -- script steps -----------------------------------------------------
    def _emit_state_dump(self):
        for i in range(self.cfg.n_params):
            self._var(i, "tensor_model_parallel", boolean(i >= self.cfg.n_replicated))
            self._var(i, "is_cuda", boolean(True))

    def _emit_probe(self):
        self._entry(API_PROBE)
        self._exit(API_PROBE, boolean(True))

    def _emit_worker_init(self):
        self._entry(API_WORKER_INIT, [scalar(self._worker_seed())])
        self._exit(API_WORKER_INIT, none_value())

    def _emit_collate(self):
        self._entry(API_COLLATE, [self._batch_digest()])
        self._exit(API_COLLATE, self._collated_digest())

    def _emit_zero_grad(self):
        if self._fault_active(FaultKind.MISSING_ZERO_GRAD):
            return  # the call was forgotten entirely
        self._entry(API_ZERO_GRAD)
        for i in range(self.cfg.n_params):
            self._var(i, "grad", self._grad_zero_digest(i))
        self._exit(API_ZERO_GRAD, none_value())

    def _emit_forward(self):
        self._entry(API_FORWARD, [self._collated_digest()])
        self._exit(API_FORWARD, self._act_digest())

    def _emit_backward(self):
        self._entry(API_BACKWARD)
        for i in range(self.cfg.n_params):
            self._var(i, "grad", self._grad_digest(i))
        self._exit(API_BACKWARD, none_value())

    def _emit_step(self):
        self._entry(API_STEP)
        if not self._fault_active(FaultKind.FROZEN_OPTIMIZER):
            # the actual parameter-update kernel runs inside the span
            self._entry(API_ADAMW, [scalar(LEARNING_RATE)])
            self._exit(API_ADAMW, none_value())
        for i in range(self.cfg.n_params):
            self._var(i, "data", self._data_digest(i))
        self._exit(API_STEP, none_value())

    def emit(self) -> list[TraceRecord]:
        emitters: dict[str, Callable[[], None]] = {
            "worker_init": self._emit_worker_init,
            "collate": self._emit_collate,
            "zero_grad": self._emit_zero_grad,
            "forward": self._emit_forward,
            "backward": self._emit_backward,
            "step": self._emit_step,
        }
        for step in range(self.cfg.n_steps):
            self.step = step
            self._emit_state_dump()
            if self.cfg.emit_probe:
                self._emit_probe()
            for name in self.cfg.api_script:
                emitters[name]()
        return self.records


def generate(config: RunConfig, out_dir: str | Path) -> Path:
    """Write one trace run directory: per-process files plus a run manifest."""
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for dp in range(config.dp_ranks):
        for tp in range(config.tp_ranks):
            emitter = _ProcessEmitter(config, dp, tp)
            records = emitter.emit()
            path = out / f"trace_{emitter.pid:03d}.ndjson"
            with path.open("w", encoding="utf-8") as fh:
                for line in iter_trace_lines(records):
                    fh.write(line + "\n")
    manifest = {
        "schema": 1,
        "run_id": config.run_id(),
        "config": config.to_wire(),
    }
    (out / "run.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out


def describe_faults() -> list[dict]:
    """Machine-readable fault catalog: what each fault alters and what catches it."""
    return [
        {
            "kind": FaultKind.TP_DIVERGENCE.value,
            "description": "replicated-parameter updates diverge on tensor-parallel ranks > 0",
            "alters": ["data digests of replicated params on tp>0 from inject_step on"],
            "expected_catcher": ["Consistent"],
            "requires": {"tp_ranks": ">=2"},
        },
        {
            "kind": FaultKind.MISSING_ZERO_GRAD.value,
            "description": "the gradient-clearing call is skipped, gradients accumulate",
            "alters": ["zero_grad spans removed", "grad digests from inject_step on"],
            "expected_catcher": ["APISequence", "EventContain"],
            "requires": {"api_script": "zero_grad"},
        },
        {
            "kind": FaultKind.FROZEN_OPTIMIZER.value,
            "description": "optimizer step performs no update: weights frozen, no math kernel",
            "alters": ["data digests frozen", "update-kernel spans removed"],
            "expected_catcher": ["EventContain"],
            "requires": {"api_script": "step"},
        },
        {
            "kind": FaultKind.DUPLICATE_SEED.value,
            "description": "loader workers lose their rank offset and share one seed",
            "alters": ["worker_init seed arguments from inject_step on"],
            "expected_catcher": ["APIArg"],
            "requires": {"api_script": "worker_init", "processes": ">=2"},
        },
        {
            "kind": FaultKind.OUTPUT_TRUNCATION.value,
            "description": "collation returns only the first sample of each batch",
            "alters": ["collate return shape and digest from inject_step on"],
            "expected_catcher": ["APIOutput"],
            "requires": {"api_script": "collate"},
        },
        {
            "kind": FaultKind.DDP_DESYNC.value,
            "description": "data-parallel replicas stop syncing and drift apart",
            "alters": ["data digests on dp>0 from inject_step on"],
            "expected_catcher": ["Consistent"],
            "requires": {"dp_ranks": ">=2"},
        },
    ]
