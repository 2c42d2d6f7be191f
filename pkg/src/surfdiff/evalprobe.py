"""Independent age-regression probe used to score conditional samples.

A ridge regression over per-patch features is fit on real training maps and
then applied to held-out real maps and to generated maps; the two error
levels are compared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, NumericError
from .patching import MetricMap, PatchTable, patchify_array

FEATURE_KINDS = ("mean", "spread")


def features(metric: MetricMap | np.ndarray, table: PatchTable, kind: str = "mean") -> np.ndarray:
    """Per-patch statistics of a map (or a (B, V) batch of value rows).

    ``kind="mean"`` gives the mean of each patch's values; ``kind="spread"``
    gives the log of each patch's (population) variance plus 1e-6.
    """
    if isinstance(metric, MetricMap):
        if metric.level != table.high_level:
            raise ArgumentError(f"map level {metric.level} != table high level {table.high_level}")
        values = metric.values
    else:
        values = np.asarray(metric)
    p = patchify_array(values.astype(np.float64), table)
    if kind == "mean":
        return p.mean(axis=-1)
    if kind == "spread":
        return np.log(p.var(axis=-1) + 1e-6)
    raise ArgumentError(f"unknown feature kind {kind!r}; choose from {FEATURE_KINDS}")


@dataclass
class ProbeModel:
    """``weights[:-1]`` act on standardized features, ``weights[-1]`` is the intercept."""

    weights: np.ndarray
    lam: float
    feat_mean: np.ndarray
    feat_std: np.ndarray
    kind: str = "mean"
    extra: dict = field(default_factory=dict)

    def predict(self, X: np.ndarray) -> np.ndarray:
        Xs = (np.atleast_2d(X) - self.feat_mean) / self.feat_std
        return Xs @ self.weights[:-1] + self.weights[-1]

    @property
    def coef(self) -> np.ndarray:
        """Weights in original feature units."""
        return self.weights[:-1] / self.feat_std

    @property
    def intercept(self) -> float:
        return float(self.weights[-1] - self.coef @ self.feat_mean)


def fit_ridge(X: np.ndarray, y: np.ndarray, lam: float = 1.0, kind: str = "mean") -> ProbeModel:
    """Ridge regression on standardized columns via a Cholesky solve."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ArgumentError(f"X shape {X.shape} incompatible with y shape {y.shape}")
    if X.shape[0] < 2:
        raise ArgumentError("need at least 2 samples")
    if lam < 0:
        raise ArgumentError("ridge lambda must be non-negative")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Xs = (X - mu) / sd
    y_mean = y.mean()
    A = Xs.T @ Xs + lam * np.eye(X.shape[1])
    b = Xs.T @ (y - y_mean)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NumericError("normal equations are singular; use a ridge lambda > 0", op="fit_ridge") from exc
    diag = np.diag(L)
    if diag.min() <= 1e-7 * diag.max():
        raise NumericError("normal equations are singular; use a ridge lambda > 0", op="fit_ridge")
    w = np.linalg.solve(L.T, np.linalg.solve(L, b))
    return ProbeModel(np.concatenate([w, [y_mean]]), float(lam), mu, sd, kind)


def evaluate(probe: ProbeModel, X: np.ndarray, y: np.ndarray) -> dict[str, float]:
    """MAE (with its standard deviation) and R^2 of the probe's predictions."""
    y = np.asarray(y, dtype=np.float64)
    if y.size < 2:
        raise ArgumentError("need at least 2 samples")
    return score(probe.predict(X), y)


def score(pred: np.ndarray, y: np.ndarray) -> dict[str, float]:
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if pred.shape != y.shape:
        raise ArgumentError("prediction and target shapes differ")
    err = np.abs(pred - y)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ArgumentError("R^2 undefined: targets have zero variance")
    ss_res = float(((pred - y) ** 2).sum())
    return {"mae": float(err.mean()), "mae_sd": float(err.std()), "r2": 1.0 - ss_res / ss_tot}
