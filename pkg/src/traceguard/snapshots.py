"""Value snapshots: the single representation for every value a trace carries.

Tensor-like values are never stored raw; they appear as content digests with
shape and dtype. Digest equality therefore stands in for value equality, and
two equal digests are guaranteed to describe the same shape and dtype because
both are part of the digest preimage.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

DIGEST_HEX_LEN = 16


class SnapshotKind(str, Enum):
    SCALAR = "scalar"
    STRING = "str"
    BOOL = "bool"
    NONE = "none"
    DIGEST = "digest"
    STRUCT = "struct"


@dataclass(frozen=True)
class ValueSnapshot:
    """One observed value: a scalar, a digest of a tensor-like, or a struct."""

    kind: SnapshotKind
    value: Any = None
    digest: str | None = None
    shape: tuple[int, ...] | None = None
    dtype: str | None = None
    fields: tuple[tuple[str, "ValueSnapshot"], ...] = field(default=())

    def is_digest(self) -> bool:
        return self.kind is SnapshotKind.DIGEST

    def comparable(self) -> Any:
        """A hashable value usable for equality grouping and conditions."""
        if self.kind is SnapshotKind.DIGEST:
            return self.digest
        if self.kind is SnapshotKind.STRUCT:
            return tuple((k, v.comparable()) for k, v in self.fields)
        return self.value

    def to_wire(self) -> dict:
        k = self.kind.value
        if self.kind is SnapshotKind.NONE:
            return {"k": k}
        if self.kind is SnapshotKind.DIGEST:
            return {
                "k": k,
                "d": self.digest,
                "shape": list(self.shape or ()),
                "dtype": self.dtype,
            }
        if self.kind is SnapshotKind.STRUCT:
            return {"k": k, "fields": {name: v.to_wire() for name, v in self.fields}}
        return {"k": k, "v": self.value}

    @staticmethod
    def from_wire(obj: Any) -> "ValueSnapshot":
        if not isinstance(obj, dict) or "k" not in obj:
            raise ValueError(f"not a value snapshot: {obj!r}")
        k = obj["k"]
        if k == "none":
            return none_value()
        if k == "scalar":
            return scalar(obj["v"])
        if k == "str":
            return string(obj["v"])
        if k == "bool":
            return boolean(obj["v"])
        if k == "digest":
            return digest_snapshot(obj["d"], tuple(obj["shape"]), obj["dtype"])
        if k == "struct":
            return struct(
                {name: ValueSnapshot.from_wire(v) for name, v in obj["fields"].items()}
            )
        raise ValueError(f"unknown snapshot kind {k!r}")


def scalar(v: float | int) -> ValueSnapshot:
    return ValueSnapshot(SnapshotKind.SCALAR, value=v)


def string(v: str) -> ValueSnapshot:
    return ValueSnapshot(SnapshotKind.STRING, value=v)


def boolean(v: bool) -> ValueSnapshot:
    return ValueSnapshot(SnapshotKind.BOOL, value=bool(v))


def none_value() -> ValueSnapshot:
    return ValueSnapshot(SnapshotKind.NONE)


def struct(fields: dict[str, ValueSnapshot]) -> ValueSnapshot:
    return ValueSnapshot(SnapshotKind.STRUCT, fields=tuple(sorted(fields.items())))


def digest_snapshot(hex_digest: str, shape: tuple[int, ...], dtype: str) -> ValueSnapshot:
    return ValueSnapshot(
        SnapshotKind.DIGEST, digest=hex_digest, shape=tuple(shape), dtype=dtype
    )


def content_digest(shape: tuple[int, ...], dtype: str, payload: bytes) -> str:
    """The canonical tensor digest: sha256 over "v1|shape|dtype|bytes", truncated.

    Shape and dtype are part of the preimage so equal digests imply equal
    shape and dtype. Trace emitters must use exactly this construction.
    """
    h = hashlib.sha256()
    h.update(b"v1|")
    h.update(",".join(str(int(d)) for d in shape).encode())
    h.update(b"|")
    h.update(str(dtype).encode())
    h.update(b"|")
    h.update(payload)
    return h.hexdigest()[:DIGEST_HEX_LEN]


def synthetic_digest(key: str, shape: tuple[int, ...], dtype: str) -> ValueSnapshot:
    """A digest snapshot whose content is a symbolic key instead of raw bytes.

    Used by the trace generator: the engine only ever compares digests, so a
    deterministic hash chain over symbolic keys models weight evolution.
    """
    return digest_snapshot(content_digest(shape, dtype, key.encode()), shape, dtype)

