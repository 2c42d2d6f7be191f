"""Surface transformer noise predictor.

Patches are linearly embedded, given a learned positional embedding, and
passed through pre-norm transformer blocks. Timestep and age conditions enter
either as two extra tokens prepended to the sequence ("token-append") or as
zero-initialized per-block modulation of the norms and residual branches
("adaln-zero"). A zero-initialized linear head decodes every patch token into
``2 * V_p`` channels: the noise estimate and a pre-sigmoid variance
interpolation coefficient.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from . import numerics as nx
from .errors import ArgumentError
from .rng import stream

COND_MODES = ("token-append", "adaln-zero")
INIT_STD = 0.02
AGE_SCALE = 1000.0


@dataclass(frozen=True)
class DenoiserConfig:
    layers: int = 12
    heads: int = 6
    hidden: int = 384
    mlp: int = 768
    n_patches: int = 320
    patch_size: int = 153
    cond_mode: str = "token-append"
    age_min: float = 24.0
    age_max: float = 45.0
    timesteps: int = 1000
    dtype: str = "float32"

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ArgumentError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.hidden % 2:
            raise ArgumentError("hidden size must be even for sinusoidal features")
        if self.cond_mode not in COND_MODES:
            raise ArgumentError(f"cond_mode must be one of {COND_MODES}, got {self.cond_mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ArgumentError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if not self.age_min < self.age_max:
            raise ArgumentError("age_min must be below age_max")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DenoiserOutput:
    """``eps_pred`` and ``v_pred`` have shape (B, F_low, V_p); ``v_pred`` is post-sigmoid."""

    eps_pred: nx.Tensor
    v_pred: nx.Tensor
    tokens_through_blocks: int = 0
    attention: list[np.ndarray] = field(default_factory=list)

    def __iter__(self) -> Iterator[nx.Tensor]:
        yield self.eps_pred
        yield self.v_pred


def sinusoidal_features(values, dim: int) -> np.ndarray:
    """[sin(v * w_k), cos(v * w_k)] for w_k = 10000^(-2k/dim), k < dim/2."""
    v = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    k = np.arange(dim // 2, dtype=np.float64)
    omega = 10000.0 ** (-2.0 * k / dim)
    arg = v * omega[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def _init_params(cfg: DenoiserConfig, seed: int) -> dict[str, nx.Tensor]:
    dt = np.dtype(cfg.dtype)
    rng = stream(seed, "denoiser-init")
    D, M, Vp, F = cfg.hidden, cfg.mlp, cfg.patch_size, cfg.n_patches
    p: dict[str, np.ndarray] = {}

    def normal(*shape):
        return (rng.standard_normal(shape) * INIT_STD).astype(dt)

    def zeros(*shape):
        return np.zeros(shape, dtype=dt)

    p["patch_embed.weight"] = normal(Vp, D)
    p["patch_embed.bias"] = zeros(D)
    p["pos_embed"] = normal(F, D)
    for name in ("time_embed", "age_embed"):
        p[f"{name}.fc1.weight"] = normal(D, D)
        p[f"{name}.fc1.bias"] = zeros(D)
        p[f"{name}.fc2.weight"] = normal(D, D)
        p[f"{name}.fc2.bias"] = zeros(D)
    # age embedding is an offset from the null vector; zero output layer so that
    # an age pathway that never trains stays identical to the null condition
    p["age_embed.fc2.weight"] = zeros(D, D)
    p["null_cond"] = normal(D)
    for i in range(cfg.layers):
        b = f"blocks.{i}"
        for ln in ("norm1", "norm2"):
            p[f"{b}.{ln}.weight"] = np.ones(D, dtype=dt)
            p[f"{b}.{ln}.bias"] = zeros(D)
        for proj in ("q", "k", "v", "o"):
            p[f"{b}.attn.{proj}.weight"] = normal(D, D)
            p[f"{b}.attn.{proj}.bias"] = zeros(D)
        p[f"{b}.mlp.fc1.weight"] = normal(D, M)
        p[f"{b}.mlp.fc1.bias"] = zeros(M)
        p[f"{b}.mlp.fc2.weight"] = normal(M, D)
        p[f"{b}.mlp.fc2.bias"] = zeros(D)
        if cfg.cond_mode == "adaln-zero":
            p[f"{b}.modulation.weight"] = zeros(D, 6 * D)
            p[f"{b}.modulation.bias"] = zeros(6 * D)
    p["final_norm.weight"] = np.ones(D, dtype=dt)
    p["final_norm.bias"] = zeros(D)
    if cfg.cond_mode == "adaln-zero":
        p["final_modulation.weight"] = zeros(D, 2 * D)
        p["final_modulation.bias"] = zeros(2 * D)
    p["decoder.weight"] = zeros(D, 2 * Vp)
    p["decoder.bias"] = zeros(2 * Vp)
    return {k: nx.Tensor(v, requires_grad=True, name=k) for k, v in p.items()}


def _linear(x: nx.Tensor, params: dict, name: str) -> nx.Tensor:
    return nx.add(nx.matmul(x, params[f"{name}.weight"]), params[f"{name}.bias"])


def _broadcast_tokens(c: nx.Tensor, n: int) -> nx.Tensor:
    """(B, D) -> (B, n, D)."""
    B, D = c.shape
    return nx.expand(nx.reshape(c, (B, 1, D)), 1, n)


class Denoiser:
    """Noise-prediction network eps_theta(x_t, t, a).

    Args:
        config: architecture; ``config.dtype`` fixes the floating-point mode.
        seed: initialization seed.
        params: optional pre-existing parameter dict (e.g. from a checkpoint).
    """

    def __init__(self, config: DenoiserConfig, seed: int = 0, params: dict[str, nx.Tensor] | None = None):
        self.config = config
        self.params = params if params is not None else _init_params(config, seed)
        self.record_attention = False
        self.calls = 0
        self.rows = 0

    def parameters(self) -> list[nx.Tensor]:
        return list(self.params.values())

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    @classmethod
    def from_arrays(cls, config: DenoiserConfig, arrays: dict[str, np.ndarray]) -> "Denoiser":
        dt = np.dtype(config.dtype)
        params = {k: nx.Tensor(np.array(v, dtype=dt), requires_grad=True, name=k) for k, v in arrays.items()}
        expected = _init_params(config, 0)
        missing = set(expected) - set(params)
        if missing:
            raise ArgumentError(f"missing parameters: {sorted(missing)[:5]}")
        for k, t in expected.items():
            if t.shape != params[k].shape:
                raise ArgumentError(f"parameter {k} has shape {params[k].shape}, expected {t.shape}")
        return cls(config, params={k: params[k] for k in expected})

    # embeddings -------------------------------------------------------

    def _mlp_embed(self, raw: np.ndarray, name: str) -> nx.Tensor:
        h = nx.Tensor(raw.astype(self.config.dtype))
        h = nx.gelu(_linear(h, self.params, f"{name}.fc1"))
        return _linear(h, self.params, f"{name}.fc2")

    def embed_timestep(self, t) -> nx.Tensor:
        """Embed step indices ``t`` in 0..T-1; returns (B, D)."""
        t = np.atleast_1d(np.asarray(t))
        if np.any(t < 0) or np.any(t >= self.config.timesteps) or np.any(t != np.floor(t)):
            raise ArgumentError(f"timestep index must be an integer in [0, {self.config.timesteps})")
        return self._mlp_embed(sinusoidal_features(t, self.config.hidden), "time_embed")

    def age_coordinate(self, ages) -> np.ndarray:
        cfg = self.config
        a = np.atleast_1d(np.asarray(ages, dtype=np.float64))
        present = ~np.isnan(a)
        if np.any((a[present] < cfg.age_min) | (a[present] > cfg.age_max)):
            raise ArgumentError(f"age outside [{cfg.age_min}, {cfg.age_max}] weeks")
        return np.where(present, AGE_SCALE * (a - cfg.age_min) / (cfg.age_max - cfg.age_min), 0.0)

    def embed_age(self, ages) -> nx.Tensor:
        """Embed ages in weeks (NaN or None = null condition); returns (B, D).

        Present ages map to ``null_cond + mlp(features(age))``; null rows are
        ``null_cond`` exactly.
        """
        a = np.atleast_1d(np.array(ages, dtype=np.float64))
        null = np.isnan(a)
        B = a.shape[0]
        base = _broadcast_rows(self.params["null_cond"], B)
        if null.all():
            return base
        coord = self.age_coordinate(a)
        offset = self._mlp_embed(sinusoidal_features(coord, self.config.hidden), "age_embed")
        if null.any():
            keep = np.broadcast_to((~null)[:, None], offset.shape).astype(self.config.dtype)
            offset = nx.mul(offset, keep)
        return nx.add(base, offset)

    # forward ----------------------------------------------------------

    def _attention(self, h: nx.Tensor, b: str, out: DenoiserOutput) -> nx.Tensor:
        B, N, D = h.shape
        H = self.config.heads
        dh = D // H

        def heads(name):
            x = _linear(h, self.params, f"{b}.attn.{name}")
            return nx.transpose(nx.reshape(x, (B, N, H, dh)), (0, 2, 1, 3))

        q, k, v = heads("q"), heads("k"), heads("v")
        scores = nx.mul(nx.matmul(q, nx.swap_last(k)), 1.0 / math.sqrt(dh))
        att = nx.softmax(scores)
        if self.record_attention:
            out.attention.append(att.data.copy())
        o = nx.reshape(nx.transpose(nx.matmul(att, v), (0, 2, 1, 3)), (B, N, D))
        return _linear(o, self.params, f"{b}.attn.o")

    def _ffn(self, h: nx.Tensor, b: str) -> nx.Tensor:
        return _linear(nx.gelu(_linear(h, self.params, f"{b}.mlp.fc1")), self.params, f"{b}.mlp.fc2")

    def _norm(self, x: nx.Tensor, name: str) -> nx.Tensor:
        return nx.layernorm(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"])

    def forward(self, x_patches, t, ages) -> DenoiserOutput:
        """Predict noise and variance coefficients.

        Args:
            x_patches: (B, F_low, V_p) noisy patch matrix, or a single (F_low, V_p) matrix.
            t: diffusion steps in 1..T, scalar or shape (B,).
            ages: ages in weeks, NaN/None meaning unconditional; scalar or shape (B,).
        """
        cfg = self.config
        x = np.asarray(x_patches, dtype=cfg.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != (cfg.n_patches, cfg.patch_size):
            raise ArgumentError(
                f"expected input (B, {cfg.n_patches}, {cfg.patch_size}), got {np.shape(x_patches)}"
            )
        B = x.shape[0]
        t = np.broadcast_to(np.asarray(t), (B,))
        if np.any(t < 1) or np.any(t > cfg.timesteps):
            raise ArgumentError(f"diffusion step must lie in 1..{cfg.timesteps}")
        ages = np.broadcast_to(np.array(ages, dtype=np.float64), (B,))
        self.calls += 1
        self.rows += B

        out = DenoiserOutput(None, None)  # type: ignore[arg-type]
        tokens = nx.add(_linear(nx.Tensor(x), self.params, "patch_embed"), self.params["pos_embed"])
        t_emb = self.embed_timestep(t - 1)
        a_emb = self.embed_age(ages)
        D = cfg.hidden

        if cfg.cond_mode == "token-append":
            cond = nx.concat([nx.reshape(t_emb, (B, 1, D)), nx.reshape(a_emb, (B, 1, D))], axis=1)
            h = nx.concat([cond, tokens], axis=1)
            N = h.shape[1]
            for i in range(cfg.layers):
                b = f"blocks.{i}"
                h = nx.add(h, self._attention(self._norm(h, f"{b}.norm1"), b, out))
                h = nx.add(h, self._ffn(self._norm(h, f"{b}.norm2"), b))
            h = nx.take(h, 2, N, axis=1)
            h = self._norm(h, "final_norm")
        else:
            c = nx.silu(nx.add(t_emb, a_emb))
            h = tokens
            N = h.shape[1]
            for i in range(cfg.layers):
                b = f"blocks.{i}"
                mod = _linear(c, self.params, f"{b}.modulation")
                sh1, sc1, g1, sh2, sc2, g2 = (
                    _broadcast_tokens(m, N) for m in nx.split(mod, [D] * 6, axis=-1)
                )
                a_in = nx.add(nx.mul(self._norm(h, f"{b}.norm1"), nx.add(sc1, 1.0)), sh1)
                h = nx.add(h, nx.mul(g1, self._attention(a_in, b, out)))
                f_in = nx.add(nx.mul(self._norm(h, f"{b}.norm2"), nx.add(sc2, 1.0)), sh2)
                h = nx.add(h, nx.mul(g2, self._ffn(f_in, b)))
            fmod = _linear(c, self.params, "final_modulation")
            shf, scf = (_broadcast_tokens(m, N) for m in nx.split(fmod, [D, D], axis=-1))
            h = nx.add(nx.mul(self._norm(h, "final_norm"), nx.add(scf, 1.0)), shf)

        dec = _linear(h, self.params, "decoder")
        Vp = cfg.patch_size
        eps, v_raw = nx.split(dec, [Vp, Vp], axis=-1)
        out.eps_pred = eps
        out.v_pred = nx.sigmoid(v_raw)
        out.tokens_through_blocks = N
        return out

    __call__ = forward

    def predict(self, x_patches, t, ages) -> tuple[np.ndarray, np.ndarray]:
        """Graph-free forward returning numpy arrays."""
        with nx.no_grad():
            out = self.forward(x_patches, t, ages)
        return out.eps_pred.data, out.v_pred.data


def _broadcast_rows(vec: nx.Tensor, n: int) -> nx.Tensor:
    """(D,) -> (n, D)."""
    return nx.expand(nx.reshape(vec, (1, vec.shape[0])), 0, n)
