"""Visual and textual branches, and the audio-to-fusion projection.

The visual branch reads a precomputed text-to-image latent ``[C, H, W]``; the
textual branch reads a precomputed sentence embedding. Both inputs come from
files, so neither backbone runs here.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .numerics import tensor as T
from .numerics.nn import Conv2d, Linear, Module
from .numerics.rng import Rng
from .numerics.tensor import Tensor

DEFAULT_LATENT_SHAPE = (4, 64, 64)
DEFAULT_CHANNELS = (16, 32, 64)


def same_pads(size: int, kernel: int = 3, stride: int = 2) -> tuple[int, int]:
    """Zero padding (before, after) giving ``ceil(size / stride)`` outputs."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


class VisualCNN(Module):
    """Three stride-2 3x3 convolutions with GELU, global average pool, linear to ``d_f``."""

    def __init__(self, latent_shape, d_f: int, rng: Rng, channels=DEFAULT_CHANNELS):
        self.latent_shape = tuple(int(s) for s in latent_shape)
        c_in = self.latent_shape[0]
        self.convs = []
        for c_out in channels:
            self.convs.append(Conv2d(c_in, c_out, 3, rng, stride=2, padding=0))
            c_in = c_out
        self.head = Linear(c_in, d_f, rng)

    def forward(self, latent) -> Tensor:
        x = T.as_tensor(latent)
        if x.ndim == 3:
            x = x.reshape(1, *x.shape)
        if tuple(x.shape[1:]) != self.latent_shape:
            raise ShapeError(f"latent geometry {tuple(x.shape[1:])} != configured {self.latent_shape}")
        for conv in self.convs:
            h, w = x.shape[-2:]
            x = T.pad2d(x, same_pads(h) + same_pads(w))
            x = T.gelu(conv(x))
        return self.head(x.mean(axis=(2, 3)))


class TextAdapter(Module):
    """``linear(d_text -> d_f)``, GELU, ``linear(d_f -> d_f)``."""

    def __init__(self, d_text: int, d_f: int, rng: Rng):
        self.d_text = d_text
        self.fc1 = Linear(d_text, d_f, rng)
        self.fc2 = Linear(d_f, d_f, rng)

    def forward(self, emb) -> Tensor:
        emb = T.as_tensor(emb)
        if emb.shape[-1] != self.d_text:
            raise ShapeError(f"text embedding width {emb.shape[-1]} != configured {self.d_text}")
        return self.fc2(T.gelu(self.fc1(emb)))


class AudioProjection(Module):
    def __init__(self, d: int, d_f: int, rng: Rng):
        self.d = d
        self.fc = Linear(d, d_f, rng)

    def forward(self, fused) -> Tensor:
        fused = T.as_tensor(fused)
        if fused.shape[-1] != self.d:
            raise ShapeError(f"audio feature width {fused.shape[-1]} != {self.d}")
        return self.fc(fused)


def visual_forward(latent, params: VisualCNN) -> Tensor:
    return params(latent)


def text_forward(emb, params: TextAdapter) -> Tensor:
    return params(emb)


def audio_to_fusion(fused, params: AudioProjection) -> Tensor:
    return params(fused)


def zero_feature(batch: int, d_f: int) -> Tensor:
    return T.as_tensor(np.zeros((batch, d_f)))
