"""Tensor arithmetic, reverse-mode autodiff, layers and Adam."""

from .gradcheck import check_gradients, finite_diff_grad, relative_error
from .nn import Conv2d, EncoderLayer, LayerNorm, Linear, Module, MultiHeadAttention, multi_head_attention
from .optim import Adam, AdamState, adam_step
from .rng import Rng
from .tensor import (
    Tape,
    Tensor,
    as_tensor,
    backward,
    canonical_sum,
    concat,
    conv2d,
    gelu,
    layernorm,
    matmul,
    no_grad,
    parameter,
    softmax,
    weighted_sum,
)

__all__ = [
    "Adam",
    "AdamState",
    "Conv2d",
    "EncoderLayer",
    "LayerNorm",
    "Linear",
    "Module",
    "MultiHeadAttention",
    "Rng",
    "Tape",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "canonical_sum",
    "check_gradients",
    "concat",
    "conv2d",
    "finite_diff_grad",
    "gelu",
    "layernorm",
    "matmul",
    "multi_head_attention",
    "no_grad",
    "parameter",
    "relative_error",
    "softmax",
    "weighted_sum",
]
