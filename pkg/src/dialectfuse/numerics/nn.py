"""Neural layers built on the tape primitives."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError
from . import tensor as T
from .rng import Rng
from .tensor import Tensor


class Module:
    """Container whose Tensor / Module / list-of-Module attributes form a parameter tree.

    Parameter names are dotted attribute paths in definition order, which makes
    them stable checkpoint keys.
    """

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def load_arrays(self, arrays: dict) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise ShapeError(f"parameter mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _init_normal(rng: Rng, shape, std: float) -> Tensor:
    return T.parameter(rng.normal(shape, std=std))


class Linear(Module):
    """``y = x @ w + b`` with ``w`` stored as ``[in, out]``."""

    def __init__(self, d_in: int, d_out: int, rng: Rng, bias: bool = True):
        self.w = _init_normal(rng, (d_in, d_out), np.sqrt(2.0 / (d_in + d_out)))
        self.b = T.parameter(np.zeros(d_out)) if bias else None

    def forward(self, x):
        y = T.matmul(x, self.w)
        return y + self.b if self.b is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = T.parameter(np.ones(d))
        self.bias = T.parameter(np.zeros(d))
        self.eps = eps

    def forward(self, x):
        return T.layernorm(x, self.gain, self.bias, self.eps)


def key_mask(valid: np.ndarray | None):
    """Turn a ``[B, L]`` validity mask into a ``[B, 1, 1, L]`` key mask."""
    if valid is None:
        return None
    valid = np.asarray(valid, dtype=bool)
    return valid[..., None, None, :] if valid.ndim == 2 else valid[None, None, :]


class MultiHeadAttention(Module):
    """Scaled dot-product attention with ``heads`` heads and an output projection."""

    def __init__(self, d: int, heads: int, rng: Rng):
        if heads < 1 or d % heads:
            raise ConfigError(f"hidden size {d} is not divisible by {heads} heads")
        self.d, self.heads = d, heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        *lead, length, _ = x.shape
        dh = self.d // self.heads
        x = x.reshape(*lead, length, self.heads, dh)
        n = len(lead)
        return x.transpose(*range(n), n + 1, n, n + 2)

    def forward(self, q, k, v, valid=None):
        """Attend ``q`` over ``k``/``v``.

        Args:
            q, k, v: ``[L, d]`` or ``[B, L, d]``.
            valid: optional boolean ``[L]`` / ``[B, L]`` marking real (unpadded) key positions.
        """
        if q.shape[-1] != self.d or k.shape[-1] != self.d or v.shape[-1] != self.d:
            raise ShapeError(f"attention inputs {q.shape}, {k.shape}, {v.shape} do not have width {self.d}")
        qh, kh, vh = self._split(self.q(q)), self._split(self.k(k)), self._split(self.v(v))
        scores = T.matmul(qh, kh.swapaxes(-1, -2)) * (1.0 / np.sqrt(self.d // self.heads))
        w = T.softmax(scores, mask=key_mask(valid))
        ctx = T.weighted_sum(w, vh)  # [..., h, L, dh]
        n = ctx.ndim - 3
        ctx = ctx.transpose(*range(n), n + 1, n, n + 2)
        ctx = ctx.reshape(*ctx.shape[:-2], self.d)
        return self.o(ctx)


def multi_head_attention(q, k, v, heads: int, params: MultiHeadAttention, mask=None) -> Tensor:
    """Functional form of :class:`MultiHeadAttention`."""
    if params.heads != heads:
        raise ConfigError(f"params built for {params.heads} heads, called with {heads}")
    return params(q, k, v, mask)


class EncoderLayer(Module):
    """Pre-norm transformer block: x + MHA(LN(x)), then x + FFN(LN(x)) with a 4d GELU FFN."""

    def __init__(self, d: int, heads: int, rng: Rng, ff_mult: int = 4):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.ff1 = Linear(d, ff_mult * d, rng)
        self.ff2 = Linear(ff_mult * d, d, rng)

    def forward(self, x, valid=None):
        h = self.ln1(x)
        x = x + self.attn(h, h, h, valid)
        return x + self.ff2(T.gelu(self.ff1(self.ln2(x))))


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: Rng, stride: int = 1, padding: int = 0):
        fan_in = c_in * kernel * kernel
        self.w = _init_normal(rng, (c_out, c_in, kernel, kernel), np.sqrt(2.0 / fan_in))
        self.b = T.parameter(np.zeros(c_out))
        self.stride, self.padding = stride, padding

    def forward(self, x):
        return T.conv2d(x, self.w, self.b, self.stride, self.padding)
