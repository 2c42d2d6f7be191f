"""Ancestral sampling with classifier-free guidance on age."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diffusion import NoiseSchedule, reverse_step
from .errors import ArgumentError, StateError
from .patching import MetricMap, PatchTable, unpatchify_array
from .rng import stream

EpsModel = Callable[[np.ndarray, np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def guided_eps(eps_cond, eps_uncond, w: float) -> np.ndarray:
    """eps_uncond + w * (eps_cond - eps_uncond)."""
    eps_cond = np.asarray(eps_cond)
    eps_uncond = np.asarray(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise ArgumentError(f"shape mismatch {eps_cond.shape} vs {eps_uncond.shape}")
    if w == 1:
        return eps_cond.copy()
    if w == 0:
        return eps_uncond.copy()
    return eps_uncond + w * (eps_cond - eps_uncond)


@dataclass
class SampleRequest:
    count: int
    age_weeks: float | None = None
    guidance_scale: float = 2.0
    seed: int = 0
    clip: float = 5.0

    def __post_init__(self):
        if self.count < 1:
            raise ArgumentError("count must be positive")
        if self.guidance_scale < 0:
            raise ArgumentError("guidance scale must be non-negative")


def ancestral_sample(
    model: EpsModel,
    shape: tuple[int, ...],
    sched: NoiseSchedule,
    ages,
    guidance: float,
    rng: np.random.Generator,
    clip: float | None = 5.0,
    dtype=np.float32,
    progress: Callable[[int, int], None] | None = None,
) -> np.ndarray:
    """Run the reverse chain from x_T ~ N(0, I) down to x_0.

    ``ages`` has one entry per sample (NaN = unconditional). When guidance is
    active (w != 1 and any age present) the conditional and null branches are
    evaluated in a single batched model call.
    """
    B = shape[0]
    ages = np.broadcast_to(np.asarray(ages, dtype=np.float64), (B,)).copy()
    guided = guidance != 1 and not np.isnan(ages).all()
    x = rng.standard_normal(shape).astype(dtype)
    for t in range(sched.T, 0, -1):
        tt = np.full(B, t, dtype=np.int64)
        if guided:
            both = np.concatenate([x, x])
            eps2, v2 = model(both, np.concatenate([tt, tt]), np.concatenate([ages, np.full(B, np.nan)]))
            eps_c, eps_u = eps2[:B], eps2[B:]
            eps = np.where(_rowmask(np.isnan(ages), eps_c), eps_c, guided_eps(eps_c, eps_u, guidance))
            v = v2[:B]
        else:
            eps, v = model(x, tt, ages)
        z = rng.standard_normal(shape).astype(dtype) if t > 1 else None
        x = reverse_step(x, t, eps, v, z, sched, clip=clip)
        if progress is not None:
            progress(sched.T - t + 1, sched.T)
    return x


def _rowmask(mask: np.ndarray, like: np.ndarray) -> np.ndarray:
    return mask.reshape(mask.shape + (1,) * (like.ndim - 1))


def sample(
    denoiser,
    request: SampleRequest,
    sched: NoiseSchedule,
    table: PatchTable,
    norm: dict | None,
    batch_size: int = 64,
    progress: Callable[[int, int], None] | None = None,
) -> list[MetricMap]:
    """Generate ``request.count`` maps at one age (or unconditionally)."""
    cfg = denoiser.config
    if request.age_weeks is not None and not (cfg.age_min <= request.age_weeks <= cfg.age_max):
        raise ArgumentError(f"age {request.age_weeks} outside [{cfg.age_min}, {cfg.age_max}]")
    age = math.nan if request.age_weeks is None else float(request.age_weeks)
    return generate(
        denoiser,
        np.full(request.count, age),
        sched,
        table,
        norm,
        guidance=request.guidance_scale,
        seed=request.seed,
        clip=request.clip,
        batch_size=batch_size,
        progress=progress,
    )


def generate(
    denoiser,
    ages,
    sched: NoiseSchedule,
    table: PatchTable,
    norm: dict | None,
    guidance: float = 2.0,
    seed: int = 0,
    clip: float | None = 5.0,
    batch_size: int = 64,
    progress: Callable[[int, int], None] | None = None,
) -> list[MetricMap]:
    """One map per entry of ``ages`` (NaN = unconditional), de-normalized.

    Batch ``b`` draws from substream ``(seed, "sample", b)``, so a batch's output
    does not depend on the batches before it.
    """
    if not norm or "mean" not in norm or "std" not in norm:
        raise StateError("checkpoint carries no normalization constants")
    cfg = denoiser.config
    if (cfg.n_patches, cfg.patch_size) != table.patches.shape:
        raise ArgumentError("network patch layout does not match the patch table")
    ages = np.asarray(ages, dtype=np.float64).reshape(-1)
    out: list[MetricMap] = []
    for b, start in enumerate(range(0, ages.size, batch_size)):
        chunk = ages[start : start + batch_size]
        n = chunk.size
        x = ancestral_sample(
            denoiser.predict,
            (n, cfg.n_patches, cfg.patch_size),
            sched,
            chunk,
            guidance,
            stream(seed, "sample", b),
            clip=clip,
            dtype=np.dtype(cfg.dtype),
            progress=progress,
        )
        values = unpatchify_array(x, table).astype(np.float64) * norm["std"] + norm["mean"]
        for a, row in zip(chunk, values):
            out.append(MetricMap(table.high_level, row.astype(np.float32), None if np.isnan(a) else float(a)))
    return out
