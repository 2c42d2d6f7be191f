"""SMF ("surface metric file") reader and writer.

Byte layout, all little-endian::

    offset  size  field
    0       4     magic b"SMF1"
    4       4     u32 icosphere level
    8       4     u32 vertex count (must equal 10 * 4**level + 2)
    12      4     u32 channel count
    16      8     f64 age in weeks, NaN when absent
    24      ...   f32 payload, vertex-major (vertex count x channel count)
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagicError, CountMismatchError, ParseError, TruncatedError
from ..icosphere import n_vertices
from ..patching import MetricMap

MAGIC = b"SMF1"
HEADER = struct.Struct("<4sIIId")
NAN_BYTES = struct.pack("<Q", 0x7FF8000000000000)


def dumps(metric: MetricMap) -> bytes:
    values = np.ascontiguousarray(metric.values, dtype="<f4")
    if metric.age_weeks is None or math.isnan(metric.age_weeks):
        age_bytes = NAN_BYTES
    else:
        age_bytes = struct.pack("<d", float(metric.age_weeks))
    head = HEADER.pack(MAGIC, metric.level, values.size, 1, 0.0)[:16] + age_bytes
    return head + values.tobytes()


def loads(buf: bytes) -> MetricMap:
    if len(buf) < HEADER.size:
        if len(buf) >= 4 and buf[:4] != MAGIC:
            raise BadMagicError(f"bad magic {buf[:4]!r}")
        raise TruncatedError(f"file has {len(buf)} bytes, header needs {HEADER.size}")
    magic, level, count, channels, age = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if level > 12:
        raise CountMismatchError(f"implausible level {level}")
    if count != n_vertices(level):
        raise CountMismatchError(f"vertex count {count} does not match level {level} ({n_vertices(level)})")
    if channels != 1:
        raise ParseError(f"expected a single channel, found {channels}")
    need = count * channels * 4
    payload = buf[HEADER.size :]
    if len(payload) < need:
        raise TruncatedError(f"payload has {len(payload)} bytes, expected {need}")
    if len(payload) > need:
        raise CountMismatchError(f"{len(payload) - need} trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    if not np.isfinite(values).all():
        raise ParseError("payload contains non-finite values")
    return MetricMap(level, values, None if math.isnan(age) else age)


def write_smf(metric: MetricMap, path: str | Path) -> None:
    Path(path).write_bytes(dumps(metric))


def read_smf(path: str | Path) -> MetricMap:
    return loads(Path(path).read_bytes())
