"""Dense tensors with reverse-mode differentiation."""

from . import ops
from .gradcheck import gradcheck
from .ops import (
    add,
    concat,
    embedding,
    exp,
    expand,
    gelu,
    layernorm,
    log,
    matmul,
    mean,
    mul,
    reshape,
    sigmoid,
    silu,
    softmax,
    split,
    sqrt,
    sub,
    sum,
    swap_last,
    take,
    tanh,
    transpose,
)
from .tensor import Tensor, as_tensor, backward, grad_enabled, no_grad

__all__ = [
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "concat",
    "embedding",
    "exp",
    "expand",
    "gelu",
    "grad_enabled",
    "gradcheck",
    "layernorm",
    "log",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "ops",
    "reshape",
    "sigmoid",
    "silu",
    "softmax",
    "split",
    "sqrt",
    "sub",
    "sum",
    "swap_last",
    "take",
    "tanh",
    "transpose",
]
