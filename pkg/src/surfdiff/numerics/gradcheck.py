"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ArgumentError, NumericError
from ..rng import stream
from .tensor import Tensor, backward, no_grad


def gradcheck(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    seed: int = 0,
    coords_per_param: int = 8,
) -> float:
    """Worst relative error between tape and central-difference gradients.

    ``f`` takes no arguments and must read ``params`` (perturbed in place). Up
    to ``coords_per_param`` coordinates are sampled per parameter; smaller
    parameters are checked exhaustively. Relative error uses the denominator
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ArgumentError(f"step h={h} outside [1e-6, 1e-4]")
    for p in params:
        if p.dtype != np.float64:
            raise ArgumentError("gradcheck requires float64 parameters")

    for p in params:
        p.grad = None
        p.requires_grad = True
    loss = f()
    analytic = backward(loss, params)
    for g in analytic:
        if not np.isfinite(g).all():
            raise NumericError("non-finite analytic gradient", op="gradcheck")

    rng = stream(seed, "gradcheck")
    worst = 0.0
    with no_grad():
        for p, g in zip(params, analytic):
            flat = p.data.reshape(-1)
            if flat.size <= coords_per_param:
                coords = np.arange(flat.size)
            else:
                coords = rng.choice(flat.size, size=coords_per_param, replace=False)
            for c in coords:
                orig = flat[c]
                flat[c] = orig + h
                fp = float(f().data)
                flat[c] = orig - h
                fm = float(f().data)
                flat[c] = orig
                num = (fp - fm) / (2.0 * h)
                ana = float(g.reshape(-1)[c])
                err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
                worst = max(worst, err)
    return worst
