"""Trace wire emission: schema-1 lines and the canonical tensor digest.

The digest construction is fixed by the trace wire specification:
``sha256(b"v1|" + comma-joined shape + b"|" + dtype + b"|" + raw bytes)``
truncated to 16 hex characters. Shape and dtype sit in the preimage, so equal
digests imply equal shape and dtype, and any two emitters hashing the same
tensor agree bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

from .errors import UnsupportedObject

SCHEMA_VERSION = 1
DIGEST_HEX_LEN = 16

# struct snapshots of mappings are depth- and width-limited to keep traces bounded
MAX_STRUCT_FIELDS = 16


def encode_line(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def header_line() -> str:
    return encode_line({"kind": "header", "schema": SCHEMA_VERSION})


def content_digest(shape: tuple[int, ...], dtype: str, payload: bytes) -> str:
    h = hashlib.sha256()
    h.update(b"v1|")
    h.update(",".join(str(int(d)) for d in shape).encode())
    h.update(b"|")
    h.update(str(dtype).encode())
    h.update(b"|")
    h.update(payload)
    return h.hexdigest()[:DIGEST_HEX_LEN]


def _as_array(value: Any):
    """Best-effort conversion of tensor-likes to a contiguous ndarray-like."""
    t = value
    for attr in ("detach", "cpu", "contiguous"):
        if hasattr(t, attr):
            t = getattr(t, attr)()
    if hasattr(t, "numpy"):
        t = t.numpy()
    if hasattr(t, "shape") and hasattr(t, "tobytes") and hasattr(t, "dtype"):
        return t
    return None


def digest_value(value: Any) -> dict:
    """DIGEST snapshot of a tensor-like value (torch tensor, ndarray, bytes)."""
    if isinstance(value, (bytes, bytearray, memoryview)):
        payload = bytes(value)
        return {
            "k": "digest",
            "d": content_digest((len(payload),), "uint8", payload),
            "shape": [len(payload)],
            "dtype": "uint8",
        }
    arr = _as_array(value)
    if arr is None:
        raise UnsupportedObject(f"cannot digest object of type {type(value).__qualname__}")
    shape = tuple(int(d) for d in arr.shape)
    dtype = str(arr.dtype)
    if dtype.startswith("torch."):
        dtype = dtype[len("torch."):]
    return {
        "k": "digest",
        "d": content_digest(shape, dtype, arr.tobytes()),
        "shape": list(shape),
        "dtype": dtype,
    }


def is_tensor_like(value: Any) -> bool:
    return (
        not isinstance(value, (str, bytes, bytearray))
        and hasattr(value, "shape")
        and (hasattr(value, "tobytes") or hasattr(value, "numpy") or hasattr(value, "detach"))
    )


def snapshot(value: Any, _depth: int = 0) -> dict:
    """Total snapshot function: anything becomes a defensible wire value."""
    if value is None:
        return {"k": "none"}
    if isinstance(value, bool):
        return {"k": "bool", "v": value}
    if isinstance(value, (int, float)):
        if value != value or value in (float("inf"), float("-inf")):
            return {"k": "str", "v": repr(value)}  # JSON cannot carry NaN/inf
        return {"k": "scalar", "v": value}
    if isinstance(value, str):
        return {"k": "str", "v": value[:256]}
    if is_tensor_like(value):
        try:
            return digest_value(value)
        except UnsupportedObject:
            return {"k": "str", "v": f"<{type(value).__qualname__}>"}
    if isinstance(value, dict) and _depth < 2:
        fields = {}
        for i, (key, v) in enumerate(value.items()):
            if i >= MAX_STRUCT_FIELDS:
                break
            fields[str(key)] = snapshot(v, _depth + 1)
        return {"k": "struct", "fields": fields}
    if isinstance(value, (list, tuple)) and _depth < 2:
        fields = {
            str(i): snapshot(v, _depth + 1)
            for i, v in enumerate(value[:MAX_STRUCT_FIELDS])
        }
        return {"k": "struct", "fields": fields}
    return {"k": "str", "v": f"<{type(value).__qualname__}>"}
