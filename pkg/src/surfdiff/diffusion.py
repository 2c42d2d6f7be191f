"""Closed-form DDPM quantities: schedules, forward marginals, posteriors,
the hybrid training loss and the single reverse step.

Step indices ``t`` run from 1 to ``T``; schedule arrays are stored 0-based so
``beta[t - 1]`` is the variance added at step ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .errors import ArgumentError, NumericError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    alpha_bar_prev: np.ndarray
    beta_tilde: np.ndarray
    log_beta_tilde_clipped: np.ndarray
    c0: np.ndarray
    ct: np.ndarray
    beta_min: float = 0.0
    beta_max: float = 0.0
    kind: str = "linear"

    def _i(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ArgumentError(f"step t must lie in 1..{self.T}")
        return t.astype(np.int64) - 1

    def at(self, name: str, t):
        return getattr(self, name)[self._i(t)]

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {"schedule.beta": self.beta}

    def meta(self) -> dict:
        return {"T": self.T, "beta_min": self.beta_min, "beta_max": self.beta_max, "kind": self.kind}


def schedule_from_beta(beta: np.ndarray, kind: str = "custom", beta_min=None, beta_max=None) -> NoiseSchedule:
    beta = np.asarray(beta, dtype=np.float64)
    T = beta.size
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    beta_tilde = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    # beta_tilde[0] == 0; the learned-variance interpolation uses beta_tilde[1] there
    if T > 1:
        log_bt = np.log(np.concatenate([[beta_tilde[1]], beta_tilde[1:]]))
    else:
        log_bt = np.log(beta)
    c0 = np.sqrt(alpha_bar_prev) * beta / (1.0 - alpha_bar)
    ct = np.sqrt(alpha) * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    return NoiseSchedule(
        T=T,
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        alpha_bar_prev=alpha_bar_prev,
        beta_tilde=beta_tilde,
        log_beta_tilde_clipped=log_bt,
        c0=c0,
        ct=ct,
        beta_min=float(beta[0]) if beta_min is None else beta_min,
        beta_max=float(beta[-1]) if beta_max is None else beta_max,
        kind=kind,
    )


def make_schedule(T: int = 1000, beta_min: float = 1e-4, beta_max: float = 0.02, kind: str = "linear") -> NoiseSchedule:
    """Linear variance schedule from ``beta_min`` to ``beta_max`` inclusive."""
    if kind != "linear":
        raise ArgumentError(f"unsupported schedule kind {kind!r}")
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ArgumentError(f"T must be a positive integer, got {T!r}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ArgumentError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    beta = np.linspace(beta_min, beta_max, T, dtype=np.float64) if T > 1 else np.array([beta_min])
    return schedule_from_beta(beta, "linear", beta_min, beta_max)


def _per_example(values: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Reshape per-example coefficients to broadcast against a batch array."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 0:
        return values
    return values.reshape(values.shape + (1,) * (like.ndim - values.ndim))


def q_sample(x0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """Draw from q(x_t | x_0) given the standard-normal draw ``eps``."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ArgumentError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    ab = _per_example(sched.at("alpha_bar", t), x0)
    out = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return out.astype(np.result_type(x0.dtype, eps.dtype))


def predict_x0(x_t, t, eps, sched: NoiseSchedule) -> np.ndarray:
    ab = _per_example(sched.at("alpha_bar", t), np.asarray(x_t))
    return (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


def posterior_mean_variance(x0, x_t, t, sched: NoiseSchedule):
    """Mean and variance of q(x_{t-1} | x_t, x_0). At t=1 the mean is x0 and the variance 0."""
    x0 = np.asarray(x0)
    c0 = _per_example(sched.at("c0", t), x0)
    ct = _per_example(sched.at("ct", t), x0)
    return c0 * x0 + ct * np.asarray(x_t), sched.at("beta_tilde", t)


def gaussian_kl(mu1, var1, mu2, var2):
    """KL(N(mu1, var1) || N(mu2, var2)), elementwise."""
    return 0.5 * (np.log(var2) - np.log(var1) + (var1 + (mu1 - mu2) ** 2) / var2 - 1.0)


def reverse_variance(t: int, v_pred, sched: NoiseSchedule) -> np.ndarray:
    """exp(v log beta_t + (1 - v) log beta_tilde_t) with the clipped beta_tilde at t=1."""
    lb = math.log(sched.at("beta", t))
    lbt = sched.at("log_beta_tilde_clipped", t)
    return np.exp(np.asarray(v_pred, dtype=np.float64) * lb + (1.0 - np.asarray(v_pred, dtype=np.float64)) * lbt)


def reverse_step(x_t, t: int, eps_pred, v_pred, z, sched: NoiseSchedule, clip: float = 5.0) -> np.ndarray:
    """One ancestral step x_t -> x_{t-1}; ``z`` is ignored at t=1."""
    x_t = np.asarray(x_t)
    eps_pred = np.asarray(eps_pred)
    if x_t.shape != eps_pred.shape or np.shape(v_pred) != x_t.shape:
        raise ArgumentError("reverse_step: x_t, eps_pred and v_pred must share a shape")
    x0_hat = predict_x0(x_t.astype(np.float64), t, eps_pred.astype(np.float64), sched)
    if clip is not None:
        x0_hat = np.clip(x0_hat, -clip, clip)
    mean, _ = posterior_mean_variance(x0_hat, x_t.astype(np.float64), t, sched)
    if t == 1 or z is None:
        out = mean
    else:
        z = np.asarray(z)
        if z.shape != x_t.shape:
            raise ArgumentError("reverse_step: z shape mismatch")
        out = mean + np.sqrt(reverse_variance(t, v_pred, sched)) * z
    return out.astype(x_t.dtype)


def antithetic_steps(rng: np.random.Generator, batch: int, T: int) -> np.ndarray:
    """Uniform steps in 1..T, paired as (t, T + 1 - t) within the batch."""
    half = (batch + 1) // 2
    t = rng.integers(1, T + 1, size=half)
    out = np.concatenate([t, T + 1 - t])[:batch]
    return out.astype(np.int64)


@dataclass
class LossTerms:
    total: nx.Tensor
    mse: float
    vlb: float


ModelFn = Callable[[np.ndarray, np.ndarray, np.ndarray], tuple]


def loss(
    model: ModelFn,
    x0: np.ndarray,
    ages: np.ndarray,
    sched: NoiseSchedule,
    rng: np.random.Generator | None = None,
    lambda_vlb: float = 0.001,
    p_uncond: float = 0.1,
    t: np.ndarray | None = None,
    eps: np.ndarray | None = None,
    drop: np.ndarray | None = None,
) -> LossTerms:
    """Hybrid objective: batch-mean of ||eps - eps_hat||^2 plus ``lambda_vlb`` times the
    variational term, in which only the variance head receives gradients.

    ``x0`` has shape (B, ...) in the model's input layout. Any of ``t``, ``eps``
    and the condition-dropout mask ``drop`` may be supplied; the rest are drawn
    from ``rng`` in that order.
    """
    x0 = np.asarray(x0)
    B = x0.shape[0]
    if t is None:
        t = antithetic_steps(rng, B, sched.T)
    t = np.asarray(t, dtype=np.int64)
    if eps is None:
        eps = rng.standard_normal(x0.shape).astype(x0.dtype)
    if drop is None:
        drop = rng.random(B) < p_uncond if p_uncond > 0 else np.zeros(B, dtype=bool)
    ages = np.array(ages, dtype=np.float64, copy=True).reshape(B)
    ages[np.asarray(drop, dtype=bool)] = np.nan

    x_t = q_sample(x0, t, eps, sched).astype(x0.dtype)
    eps_hat, v_hat = model(x_t, t, ages)

    diff = nx.sub(eps_hat, eps)
    mse = nx.mul(nx.sum(nx.mul(diff, diff)), 1.0 / B)

    terms = mse
    vlb_value = 0.0
    if lambda_vlb > 0:
        x64, xt64 = x0.astype(np.float64), x_t.astype(np.float64)
        x0_hat = predict_x0(xt64, t, eps_hat.data.astype(np.float64), sched)
        mu_theta, _ = posterior_mean_variance(x0_hat, xt64, t, sched)
        mu_true, var_true = posterior_mean_variance(x64, xt64, t, sched)

        shape = x0.shape
        lbt = _per_example(sched.at("log_beta_tilde_clipped", t), x0)
        lb = _per_example(np.log(sched.at("beta", t)), x0)
        first = _per_example(t == 1, x0)
        var_true = _per_example(var_true, x0)
        # KL for t > 1 and the decoder NLL for t = 1 share the form
        # 0.5 * (log S + A / S + C) with per-element constants A and C
        a_kl = var_true + (mu_true - mu_theta) ** 2
        a_nll = (x64 - mu_theta) ** 2
        A = np.where(first, a_nll, a_kl)
        C = np.where(first, LOG_2PI, -lbt - 1.0)
        dt = eps_hat.dtype
        log_s = nx.add(nx.mul(v_hat, np.broadcast_to(lb - lbt, shape).astype(dt)), np.broadcast_to(lbt, shape).astype(dt))
        inv_s = nx.exp(nx.mul(log_s, -1.0))
        per = nx.add(nx.add(log_s, nx.mul(inv_s, np.broadcast_to(A, shape).astype(dt))), np.broadcast_to(C, shape).astype(dt))
        vlb = nx.mul(nx.sum(per), 0.5 / B)
        vlb_value = float(vlb.data)
        terms = nx.add(mse, nx.mul(vlb, lambda_vlb))

    mse_value = float(mse.data)
    if not math.isfinite(mse_value):
        raise NumericError("non-finite MSE term", op="loss_mse")
    if not math.isfinite(vlb_value):
        raise NumericError("non-finite variational term", op="loss_vlb")
    return LossTerms(terms, mse_value, vlb_value)
