"""Symmetric cross-attention between the token sequences of two dialects.

Each dialect's encoder output is projected to Q/K/V with the same three maps.
Dialect A's values are read with dialect B's queries and vice versa; the
class-position rows of both results are concatenated and projected back to
the model width.
"""

from __future__ import annotations

import numpy as np

from .audio import EncodedAudio
from .errors import ConfigError, ShapeError
from .numerics import tensor as T
from .numerics.nn import Linear, Module
from .numerics.rng import Rng
from .numerics.tensor import Tensor

SCALE_MODES = ("d", "sqrt_d")


class DialectCrossAttention(Module):
    def __init__(self, d: int, rng: Rng, scale_mode: str = "d"):
        if scale_mode not in SCALE_MODES:
            raise ConfigError(f"scale mode must be one of {SCALE_MODES}, got {scale_mode!r}")
        self.d = d
        self.scale_mode = scale_mode
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(2 * d, d, rng)

    @property
    def scale(self) -> float:
        return float(self.d) if self.scale_mode == "d" else float(np.sqrt(self.d))

    def qkv_project(self, x) -> tuple[Tensor, Tensor, Tensor]:
        x = T.as_tensor(x)
        if x.shape[-1] != self.d:
            raise ShapeError(f"feature width {x.shape[-1]} != {self.d}")
        return self.q(x), self.k(x), self.v(x)

    def cross_attend(self, q, k, v, valid_q=None, valid_kv=None) -> Tensor:
        """``softmax(q k^T / s) v`` with padded keys excluded.

        ``q`` comes from one dialect, ``k``/``v`` from the other; both must describe the
        same sentence, so their lengths and masks have to agree.
        """
        if q.shape != k.shape or k.shape != v.shape:
            raise ShapeError(f"dialect sequences differ in shape: {q.shape}, {k.shape}, {v.shape}")
        if valid_q is not None and valid_kv is not None and not np.array_equal(valid_q, valid_kv):
            raise ShapeError("dialect sequences of one sentence must share a mask")
        valid = valid_kv if valid_kv is not None else valid_q
        scores = T.matmul(q, k.swapaxes(-1, -2)) * (1.0 / self.scale)
        mask = None
        if valid is not None:
            valid = np.asarray(valid, dtype=bool)
            mask = valid[..., None, :]
        return T.weighted_sum(T.softmax(scores, mask=mask), v)

    def attention_weights(self, q, k, valid=None) -> np.ndarray:
        scores = T.matmul(q, k.swapaxes(-1, -2)) * (1.0 / self.scale)
        mask = None if valid is None else np.asarray(valid, dtype=bool)[..., None, :]
        return T.softmax(scores, mask=mask).data

    def fuse_concat(self, att_a, att_b) -> Tensor:
        """Project ``[att_a[cls] ; att_b[cls]]`` to width ``d``.

        Written as two block products so that swapping the inputs together with
        the weight blocks reproduces the output exactly.
        """
        if att_a.shape != att_b.shape:
            raise ShapeError(f"attended sequences differ in shape: {att_a.shape} vs {att_b.shape}")
        single = att_a.ndim == 2
        a_cls, b_cls = att_a[..., 0:1, :], att_b[..., 0:1, :]
        w = self.out.w
        out = T.matmul(a_cls, w[: self.d]) + T.matmul(b_cls, w[self.d :]) + self.out.b
        return out[0] if single else out[..., 0, :]

    def forward(self, enc_a: EncodedAudio, enc_b: EncodedAudio) -> Tensor:
        if enc_a.tokens.shape != enc_b.tokens.shape:
            raise ShapeError(f"dialect sequences differ in length: {enc_a.tokens.shape} vs {enc_b.tokens.shape}")
        if not np.array_equal(enc_a.valid, enc_b.valid):
            raise ShapeError("dialect sequences of one sentence must share a mask")
        qa, ka, va = self.qkv_project(enc_a.tokens)
        qb, kb, vb = self.qkv_project(enc_b.tokens)
        att_a = self.cross_attend(qb, ka, va, enc_a.valid, enc_a.valid)
        att_b = self.cross_attend(qa, kb, vb, enc_b.valid, enc_b.valid)
        return self.fuse_concat(att_a, att_b)
