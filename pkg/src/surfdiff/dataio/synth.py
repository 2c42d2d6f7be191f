"""Synthetic age-conditioned metric maps.

Each map is ``tanh(sum_j w_j * sin(kappa * <k_j, v> + phi_j))`` over eight
random plane waves on the sphere, with spatial frequency ``kappa`` rising
linearly from 2 at ``age_min`` to 12 at ``age_max``, so older samples are
rougher. Draws for sample ``i`` come from substream ``(seed, "synth", i)`` in
the order: age, w (8), wave directions (8x3), phases (8).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..icosphere import build_icosphere
from ..patching import MetricMap
from ..rng import stream
from .manifest import Entry, Manifest, assign_splits, compute_normalization
from .smf import write_smf

N_WAVES = 8


def frequency(age: float, age_min: float = 24.0, age_max: float = 45.0) -> float:
    return 2.0 + 10.0 * (age - age_min) / (age_max - age_min)


def synth_values(vertices: np.ndarray, age: float, rng: np.random.Generator, age_min=24.0, age_max=45.0) -> np.ndarray:
    w = rng.normal(0.0, 1.0 / np.sqrt(N_WAVES), size=N_WAVES)
    k = rng.standard_normal((N_WAVES, 3))
    k /= np.linalg.norm(k, axis=1, keepdims=True)
    phi = rng.uniform(0.0, 2.0 * np.pi, size=N_WAVES)
    kappa = frequency(age, age_min, age_max)
    field = np.sin(kappa * (vertices @ k.T) + phi) @ w
    return np.tanh(field).astype(np.float32)


def synth_map(level: int, seed: int, index: int, age_min: float = 24.0, age_max: float = 45.0, age: float | None = None) -> MetricMap:
    """Sample ``index`` of the stream; pass ``age`` to override the drawn age."""
    rng = stream(seed, "synth", index)
    drawn = rng.uniform(age_min, age_max)
    a = drawn if age is None else float(age)
    vals = synth_values(build_icosphere(level).vertices, a, rng, age_min, age_max)
    return MetricMap(level, vals, a)


def synth_dataset(n: int, level: int, seed: int, out_dir: str | Path, age_min: float = 24.0, age_max: float = 45.0) -> Manifest:
    """Write ``n`` SMF files plus ``manifest.json`` into ``out_dir``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = assign_splits(n, seed)
    entries = []
    for i in range(n):
        m = synth_map(level, seed, i, age_min, age_max)
        name = f"sample_{i:05d}.smf"
        write_smf(m, out / name)
        entries.append(Entry(name, float(m.age_weeks), splits[i]))
    manifest = Manifest(level, entries, None, out)
    manifest.normalization = compute_normalization(manifest)
    manifest.save(out / "manifest.json")
    return manifest


def roughness(values: np.ndarray, edges: np.ndarray) -> float:
    """Mean squared difference across mesh edges."""
    d = values[..., edges[:, 0]] - values[..., edges[:, 1]]
    return float(np.mean(d.astype(np.float64) ** 2))
