"""Named-tensor binary container used for checkpoints and cached tables.

Layout (all integers little-endian)::

    b"SDC1"                 magic
    u64 header_len          length of the UTF-8 JSON header
    header                  {"meta": {...}, "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}]}
    payload                 raw little-endian tensor bytes at the recorded offsets

Tensors are written in insertion order; dtypes are restricted to the little-endian
forms of float32/float64/int64/uint64/int32/uint8.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .errors import BadMagicError, ParseError, TruncatedError

MAGIC = b"SDC1"
_DTYPES = {"f4": "<f4", "f8": "<f8", "i8": "<i8", "u8": "<u8", "i4": "<i4", "u1": "u1"}


def _code(arr: np.ndarray) -> str:
    code = arr.dtype.str.lstrip("<>|=")
    if code not in _DTYPES:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    return code


def dumps(tensors: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> bytes:
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _code(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append(
            {"name": name, "dtype": code, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(blobs)


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if len(buf) < 12:
        raise TruncatedError("container shorter than its fixed header")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    (hlen,) = struct.unpack("<Q", buf[4:12])
    if len(buf) < 12 + hlen:
        raise TruncatedError("container header truncated")
    try:
        header = json.loads(buf[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"corrupt container header: {exc}") from exc
    base = 12 + hlen
    out = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        end = start + e["nbytes"]
        if end > len(buf):
            raise TruncatedError(f"tensor {e['name']!r} truncated")
        dt = np.dtype(_DTYPES[e["dtype"]])
        arr = np.frombuffer(buf[start:end], dtype=dt).reshape(e["shape"])
        out[e["name"]] = arr.astype(dt.newbyteorder("="), copy=True)
    return out, header["meta"]


def save(path: str | Path, tensors: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> None:
    """Atomic write: the file at ``path`` is either the old or the new content."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(dumps(tensors, meta))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    return loads(Path(path).read_bytes())
