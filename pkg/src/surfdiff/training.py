"""Training loop: AdamW, EMA shadow weights, checkpoints and metrics."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import container
from . import numerics as nx
from .dataio import compute_normalization, load_manifest, normalize
from .denoiser import Denoiser, DenoiserConfig
from .diffusion import NoiseSchedule, loss, make_schedule, schedule_from_beta
from .errors import ArgumentError, NumericError, StateError
from .patching import PatchTable, load_or_build_patch_table, patch_size, patchify_array
from .rng import from_state, get_state, stream

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "surfdiff-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    manifest: str = ""
    out_dir: str = "run"
    low_level: int = 2
    steps: int = 1000
    batch_size: int = 180
    lr: float = 1e-4
    weight_decay: float = 0.0
    ema_decay: float = 0.9999
    p_uncond: float = 0.1
    lambda_vlb: float = 0.001
    seed: int = 0
    timesteps: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 0.02
    layers: int = 12
    heads: int = 6
    hidden: int = 384
    mlp: int = 768
    cond_mode: str = "token-append"
    age_min: float = 24.0
    age_max: float = 45.0
    dtype: str = "float32"
    checkpoint_every: int = 500
    log_every: int = 10

    def __post_init__(self):
        if not self.lr > 0:
            raise ArgumentError("learning rate must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ArgumentError("EMA decay must lie in [0, 1)")
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ArgumentError("p_uncond must lie in [0, 1]")
        if self.batch_size < 1 or self.steps < 0:
            raise ArgumentError("batch_size must be positive and steps non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ArgumentError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def denoiser_config(self, high_level: int) -> DenoiserConfig:
        return DenoiserConfig(
            layers=self.layers,
            heads=self.heads,
            hidden=self.hidden,
            mlp=self.mlp,
            n_patches=20 * 4**self.low_level,
            patch_size=patch_size(high_level - self.low_level),
            cond_mode=self.cond_mode,
            age_min=self.age_min,
            age_max=self.age_max,
            timesteps=self.timesteps,
            dtype=self.dtype,
        )

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.timesteps, self.beta_min, self.beta_max)


@dataclass
class TrainState:
    step: int
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    ema: dict[str, np.ndarray]
    rng: np.random.Generator
    meta: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, params: dict[str, np.ndarray], seed: int) -> "TrainState":
        return cls(
            step=0,
            params={k: v.copy() for k, v in params.items()},
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
            ema={k: v.copy() for k, v in params.items()},
            rng=stream(seed, "train"),
        )


def adamw_step(params, grads, m, v, step: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8, wd=0.0):
    """One decoupled-weight-decay Adam update over parallel lists of arrays.

    Returns new ``(params, m, v)`` lists; inputs are left untouched.
    """
    if step < 1:
        raise ArgumentError("step counter starts at 1")
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    out_p, out_m, out_v = [], [], []
    for p, g, mi, vi in zip(params, grads, m, v):
        if p.shape != g.shape or p.shape != mi.shape or p.shape != vi.shape:
            raise ArgumentError(f"shape mismatch in AdamW: {p.shape} vs {g.shape}")
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient", op="adamw_step")
        mi = beta1 * mi + (1.0 - beta1) * g
        vi = beta2 * vi + (1.0 - beta2) * (g * g)
        m_hat = mi / bc1
        v_hat = vi / bc2
        with np.errstate(over="ignore", invalid="ignore"):
            p = p * (1.0 - lr * wd) if wd else p
            p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        if not np.isfinite(p).all():
            raise NumericError("parameter update overflowed", op="adamw_step")
        out_p.append(p.astype(g.dtype, copy=False))
        out_m.append(mi.astype(g.dtype, copy=False))
        out_v.append(vi.astype(g.dtype, copy=False))
    return out_p, out_m, out_v


def ema_update(ema, params, decay: float):
    """decay * ema + (1 - decay) * params, per array."""
    out = []
    for e, p in zip(ema, params):
        if e.shape != p.shape:
            raise ArgumentError(f"EMA shape {e.shape} != param shape {p.shape}")
        out.append((decay * e + (1.0 - decay) * p).astype(e.dtype, copy=False))
    return out


# checkpoints ---------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    state: TrainState,
    config: TrainConfig,
    dcfg: DenoiserConfig,
    sched: NoiseSchedule,
    norm: dict,
    high_level: int,
) -> None:
    tensors: dict[str, np.ndarray] = {}
    for prefix, group in (("param", state.params), ("adam_m", state.m), ("adam_v", state.v), ("ema", state.ema)):
        for k, arr in group.items():
            tensors[f"{prefix}/{k}"] = arr
    tensors["schedule/beta"] = sched.beta
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "rng": get_state(state.rng),
        "train_config": config.to_dict(),
        "denoiser_config": dcfg.to_dict(),
        "schedule": sched.meta(),
        "normalization": norm,
        "high_level": high_level,
        "low_level": config.low_level,
    }
    container.save(path, tensors, meta)


@dataclass
class Checkpoint:
    state: TrainState
    train_config: TrainConfig
    denoiser_config: DenoiserConfig
    schedule: NoiseSchedule
    normalization: dict
    high_level: int
    low_level: int

    def denoiser(self, weights: str = "ema") -> Denoiser:
        if weights not in ("ema", "raw"):
            raise ArgumentError("weights must be 'ema' or 'raw'")
        arrays = self.state.ema if weights == "ema" else self.state.params
        return Denoiser.from_arrays(self.denoiser_config, arrays)


def load_checkpoint(path: str | Path) -> Checkpoint:
    tensors, meta = container.load(path)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise StateError(f"{path} is not a training checkpoint")
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}, "ema": {}}
    for name, arr in tensors.items():
        prefix, _, key = name.partition("/")
        if prefix in groups:
            groups[prefix][key] = arr
    state = TrainState(
        step=int(meta["step"]),
        params=groups["param"],
        m=groups["adam_m"],
        v=groups["adam_v"],
        ema=groups["ema"],
        rng=from_state(meta["rng"]),
    )
    sm = meta["schedule"]
    sched = schedule_from_beta(tensors["schedule/beta"], sm["kind"], sm["beta_min"], sm["beta_max"])
    return Checkpoint(
        state=state,
        train_config=TrainConfig.from_dict(meta["train_config"]),
        denoiser_config=DenoiserConfig(**meta["denoiser_config"]),
        schedule=sched,
        normalization=meta["normalization"],
        high_level=int(meta["high_level"]),
        low_level=int(meta["low_level"]),
    )


# data ----------------------------------------------------------------


@dataclass
class TrainingData:
    x: np.ndarray  # (N, F_low, V_p), normalized
    ages: np.ndarray
    table: PatchTable
    norm: dict
    high_level: int


def prepare_data(config: TrainConfig, cache_dir: str | Path | None = None) -> TrainingData:
    manifest = load_manifest(config.manifest)
    manifest.validate()
    if config.low_level >= manifest.level:
        raise ArgumentError(f"patch level {config.low_level} must be below data level {manifest.level}")
    norm = manifest.normalization or compute_normalization(manifest)
    maps = manifest.load_maps("train")
    if not maps:
        raise ArgumentError("manifest has no training samples")
    ages = np.array([np.nan if m.age_weeks is None else m.age_weeks for m in maps])
    table = load_or_build_patch_table(manifest.level, config.low_level, cache_dir)
    vals = normalize(np.stack([m.values for m in maps]), norm["mean"], norm["std"])
    x = patchify_array(vals, table).astype(config.dtype)
    return TrainingData(x, ages, table, norm, manifest.level)


# loop ----------------------------------------------------------------


def _draw_batch(rng: np.random.Generator, n: int, batch: int) -> np.ndarray:
    if batch <= n:
        return rng.permutation(n)[:batch]
    return rng.integers(0, n, size=batch)


def train_steps(
    model: Denoiser,
    state: TrainState,
    data: TrainingData,
    config: TrainConfig,
    sched: NoiseSchedule,
    until: int,
    on_log: Callable[[dict], None] | None = None,
    on_checkpoint: Callable[[TrainState], None] | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> TrainState:
    """Advance ``state`` to step ``until``; ``model`` holds the live parameters."""
    names = list(state.params)
    tensors = [model.params[k] for k in names]
    for k, t in zip(names, tensors):
        t.data = state.params[k]
    t0 = time.perf_counter()
    while state.step < until:
        idx = _draw_batch(state.rng, data.x.shape[0], config.batch_size)
        terms = loss(
            model,
            data.x[idx],
            data.ages[idx],
            sched,
            state.rng,
            lambda_vlb=config.lambda_vlb,
            p_uncond=config.p_uncond,
        )
        for t in tensors:
            t.grad = None
        grads = nx.backward(terms.total, tensors)
        step = state.step + 1
        new_p, new_m, new_v = adamw_step(
            [state.params[k] for k in names],
            grads,
            [state.m[k] for k in names],
            [state.v[k] for k in names],
            step,
            config.lr,
            wd=config.weight_decay,
        )
        new_e = ema_update([state.ema[k] for k in names], new_p, config.ema_decay)
        for k, p, m, v, e, t in zip(names, new_p, new_m, new_v, new_e, tensors):
            state.params[k], state.m[k], state.v[k], state.ema[k] = p, m, v, e
            t.data = p
        state.step = step
        rec = {
            "step": step,
            "loss_mse": terms.mse,
            "loss_vlb": terms.vlb,
            "lr": config.lr,
            "wall_ms": round((time.perf_counter() - t0) * 1000.0, 3),
        }
        if on_log is not None and (step % config.log_every == 0 or step == until):
            on_log(rec)
        if on_step is not None:
            on_step(rec)
        if on_checkpoint is not None and config.checkpoint_every and step % config.checkpoint_every == 0:
            on_checkpoint(state)
    return state


def train(config: TrainConfig, resume: str | Path | None = None, progress: Callable[[dict], None] | None = None):
    """Run training, writing checkpoints and ``metrics.jsonl`` into ``config.out_dir``.

    ``progress`` receives the metrics record of every step. Returns
    ``(state, metrics)`` where ``metrics`` holds the logged records.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = prepare_data(config, cache_dir=out / "cache")
    dcfg = config.denoiser_config(data.high_level)
    sched = config.schedule()

    if resume is not None:
        ck = load_checkpoint(resume)
        state = ck.state
        model = ck.denoiser("raw")
    else:
        model = Denoiser(dcfg, seed=config.seed)
        state = TrainState.fresh(model.named_arrays(), config.seed)

    metrics: list[dict] = []
    metrics_path = out / "metrics.jsonl"
    mode = "a" if resume is not None else "w"

    def save(s: TrainState, name: str):
        save_checkpoint(out / name, s, config, dcfg, sched, data.norm, data.high_level)

    with open(metrics_path, mode) as fh:

        def on_log(rec):
            metrics.append(rec)
            fh.write(json.dumps(rec) + "\n")
            fh.flush()

        try:
            train_steps(
                model,
                state,
                data,
                config,
                sched,
                config.steps,
                on_log=on_log,
                on_checkpoint=lambda s: save(s, f"checkpoint_{s.step:07d}.bin"),
                on_step=progress,
            )
        except NumericError:
            log.error("non-finite loss at step %d; last good checkpoint retained", state.step + 1)
            raise
    save(state, "final.bin")
    return state, metrics
