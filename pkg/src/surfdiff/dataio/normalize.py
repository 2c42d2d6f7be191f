from __future__ import annotations

import numpy as np

from ..errors import ArgumentError


def normalize(values, mean: float, std: float) -> np.ndarray:
    if not std > 0:
        raise ArgumentError(f"std must be positive, got {std}")
    v = np.asarray(values)
    dt = v.dtype if v.dtype.kind == "f" else np.float64
    return ((v.astype(np.float64) - mean) / std).astype(dt)


def denormalize(values, mean: float, std: float) -> np.ndarray:
    if not std > 0:
        raise ArgumentError(f"std must be positive, got {std}")
    v = np.asarray(values)
    dt = v.dtype if v.dtype.kind == "f" else np.float64
    return (v.astype(np.float64) * std + mean).astype(dt)
