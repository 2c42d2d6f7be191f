"""Counter-based random streams.

Every random draw in the package comes from a Philox4x64-10 generator
(numpy's ``Philox`` bit generator) whose 128-bit key is derived from
``(seed, tag, index)``::

    key = first 16 bytes of SHA-256(b"surfdiff" | u64le(seed) | utf8(tag) | 0x00 | u64le(index))

read as two little-endian u64 words. Substreams are therefore independent of
thread count and call order, and identical across platforms for a given
numpy release.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Any

import numpy as np


def _key(seed: int, tag: str, index: int) -> list[int]:
    h = hashlib.sha256()
    h.update(b"surfdiff")
    h.update(struct.pack("<Q", int(seed) & 0xFFFFFFFFFFFFFFFF))
    h.update(tag.encode("utf-8") + b"\x00")
    h.update(struct.pack("<Q", int(index) & 0xFFFFFFFFFFFFFFFF))
    lo, hi = struct.unpack("<QQ", h.digest()[:16])
    return [lo, hi]


def stream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Return the generator for substream ``(seed, tag, index)``."""
    return np.random.Generator(np.random.Philox(key=_key(seed, tag, index)))


def get_state(gen: np.random.Generator) -> dict[str, Any]:
    """JSON-safe snapshot of a Philox generator state."""
    st = gen.bit_generator.state
    if st["bit_generator"] != "Philox":
        raise ValueError("only Philox generators are serializable")
    inner = st["state"]
    return {
        "bit_generator": "Philox",
        "counter": [int(x) for x in inner["counter"]],
        "key": [int(x) for x in inner["key"]],
        "buffer": [int(x) for x in st["buffer"]],
        "buffer_pos": int(st["buffer_pos"]),
        "has_uint32": int(st["has_uint32"]),
        "uinteger": int(st["uinteger"]),
    }


def from_state(state: dict[str, Any]) -> np.random.Generator:
    """Inverse of :func:`get_state`."""
    bg = np.random.Philox()
    bg.state = {
        "bit_generator": "Philox",
        "state": {
            "counter": np.array(state["counter"], dtype=np.uint64),
            "key": np.array(state["key"], dtype=np.uint64),
        },
        "buffer": np.array(state["buffer"], dtype=np.uint64),
        "buffer_pos": state["buffer_pos"],
        "has_uint32": state["has_uint32"],
        "uinteger": state["uinteger"],
    }
    return np.random.Generator(bg)
