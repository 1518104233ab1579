"""Sentence-level phonetic features from per-character acoustic vectors.

A sentence ``c_1..c_n`` is looked up row by row in a dialect's feature table,
projected to the model width, offset by learnable position embeddings, and
prefixed with a learnable class token. A pre-norm transformer encodes the
sequence; the class-position output is the pooled sentence feature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .numerics import tensor as T
from .numerics.nn import EncoderLayer, LayerNorm, Linear, Module
from .numerics.rng import Rng
from .numerics.tensor import Tensor

UNK = "<unk>"
DEFAULT_FEATURE_DIM = 88
DEFAULT_MAX_LEN = 64


@dataclass
class AudioFeatureTable:
    """Per-dialect map from character token to a fixed-length acoustic vector."""

    dialect: str
    matrix: np.ndarray
    index: dict

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise DataError(f"{self.dialect}: feature matrix must be 2-D, got {self.matrix.shape}")
        if UNK not in self.index:
            raise DataError(f"{self.dialect}: feature table has no {UNK!r} row")
        rows = self.matrix.shape[0]
        for token, row in self.index.items():
            if not 0 <= int(row) < rows:
                raise DataError(f"{self.dialect}: token {token!r} maps to row {row}, table has {rows} rows")
        if not np.all(np.isfinite(self.matrix)):
            raise DataError(f"{self.dialect}: feature table contains non-finite values")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, token) -> bool:
        return token in self.index

    def row(self, token: str) -> np.ndarray:
        return self.matrix[self.index.get(token, self.index[UNK])]

    def row_ids(self, chars) -> tuple[np.ndarray, np.ndarray]:
        """Row numbers for ``chars`` plus a boolean mask of unknown tokens."""
        unk_row = self.index[UNK]
        ids = np.array([self.index.get(c, unk_row) for c in chars], dtype=np.int64)
        unk = np.array([c not in self.index for c in chars], dtype=bool)
        return ids, unk


def assemble_sequence(chars, table: AudioFeatureTable, max_len: int = DEFAULT_MAX_LEN, strict: bool = False):
    """Look up each character's feature row, in order.

    Returns:
        ``(features [n, d_a], unk_count)``; unknown tokens get the ``<unk>`` row.

    Raises:
        ShapeError: empty sentence or longer than ``max_len``.
        DataError: an unknown token in ``strict`` mode.
    """
    chars = list(chars)
    if not chars:
        raise ShapeError("cannot assemble an empty sentence")
    if len(chars) > max_len:
        raise ShapeError(f"sentence of {len(chars)} characters exceeds max length {max_len}")
    ids, unk = table.row_ids(chars)
    if strict and unk.any():
        missing = [c for c, u in zip(chars, unk) if u]
        raise DataError(f"{table.dialect}: unknown characters {missing[:5]}")
    return table.matrix[ids], int(unk.sum())


def assemble_batch(sentences, table: AudioFeatureTable, max_len: int = DEFAULT_MAX_LEN, strict: bool = False):
    """Right-pad a list of sentences into ``[B, n_max, d_a]``.

    Returns:
        ``(features, valid [B, n_max], unk [B, n_max], unk_count)``.
    """
    n_max = max(len(s) for s in sentences)
    feats = np.zeros((len(sentences), n_max, table.dim))
    valid = np.zeros((len(sentences), n_max), dtype=bool)
    unk = np.zeros((len(sentences), n_max), dtype=bool)
    total = 0
    for i, chars in enumerate(sentences):
        rows, count = assemble_sequence(chars, table, max_len, strict)
        n = len(chars)
        feats[i, :n] = rows
        valid[i, :n] = True
        unk[i, :n] = table.row_ids(chars)[1]
        total += count
    return feats, valid, unk, total


@dataclass
class EncodedAudio:
    tokens: Tensor  # [B, n+1, d]
    valid: np.ndarray  # [B, n+1]

    @property
    def pooled(self) -> Tensor:
        return self.tokens[:, 0]


class AudioEncoder(Module):
    """Input projection, position/class embeddings and a pre-norm transformer stack."""

    def __init__(self, d_a: int, d: int, heads: int, layers: int, rng: Rng, max_len: int = DEFAULT_MAX_LEN):
        if d % heads:
            raise ConfigError(f"hidden size {d} is not divisible by {heads} heads")
        self.d_a, self.d, self.max_len = d_a, d, max_len
        self.proj = Linear(d_a, d, rng)
        self.pos = T.parameter(rng.normal((max_len + 1, d), std=0.02))
        self.cls = T.parameter(rng.normal((d,), std=0.02))
        self.unk = T.parameter(np.zeros(d_a))
        self.layers = [EncoderLayer(d, heads, rng) for _ in range(layers)]
        self.norm = LayerNorm(d)

    def add_pos_class(self, a_feat, unk_mask=None) -> Tensor:
        """``[a_cls + p_0, proj(a_1) + p_1, ..., proj(a_n) + p_n]``.

        Args:
            a_feat: ``[n, d_a]`` or ``[B, n, d_a]`` (array or Tensor).
            unk_mask: optional boolean mask of rows that used the ``<unk>`` entry; those
                rows receive the learnable unknown-token offset.
        """
        a_feat = T.as_tensor(a_feat)
        single = a_feat.ndim == 2
        if single:
            a_feat = a_feat.reshape(1, *a_feat.shape)
        bsz, n, d_a = a_feat.shape
        if n == 0:
            raise ShapeError("cannot encode an empty sentence")
        if n > self.max_len:
            raise ShapeError(f"sentence of {n} characters exceeds max length {self.max_len}")
        if d_a != self.d_a:
            raise ShapeError(f"acoustic feature width {d_a} != configured {self.d_a}")
        if unk_mask is not None and np.any(unk_mask):
            mask = np.asarray(unk_mask, dtype=np.float64).reshape(bsz, n, 1)
            a_feat = a_feat + T.as_tensor(mask) * self.unk
        body = self.proj(a_feat) + self.pos[1 : n + 1]
        head = (self.cls + self.pos[0]).reshape(1, 1, self.d) * T.as_tensor(np.ones((bsz, 1, 1)))
        seq = T.concat([head, body], axis=1)
        return seq[0] if single else seq

    def encode(self, seq, valid=None) -> EncodedAudio:
        """Run the encoder stack.

        Args:
            seq: ``[n+1, d]`` or ``[B, n+1, d]`` from :meth:`add_pos_class`.
            valid: boolean ``[B, n+1]`` marking the class position and real tokens;
                padded positions are never attended to.
        """
        seq = T.as_tensor(seq)
        if seq.ndim == 2:
            seq = seq.reshape(1, *seq.shape)
        bsz, length, d = seq.shape
        if d != self.d:
            raise ShapeError(f"sequence width {d} != encoder width {self.d}")
        if valid is None:
            valid = np.ones((bsz, length), dtype=bool)
        valid = np.asarray(valid, dtype=bool).reshape(bsz, -1)
        if valid.shape != (bsz, length):
            raise ShapeError(f"mask shape {valid.shape} does not match sequence {seq.shape[:2]}")
        if not valid[:, 0].all():
            raise ShapeError("mask must mark the class position as valid")
        x = seq
        for layer in self.layers:
            x = layer(x, valid)
        return EncodedAudio(self.norm(x), valid)

    def forward(self, a_feat, valid_tokens=None, unk_mask=None) -> EncodedAudio:
        """Encode padded acoustic sequences ``[B, n, d_a]`` with token mask ``[B, n]``."""
        a_feat = np.asarray(a_feat.data if isinstance(a_feat, Tensor) else a_feat)
        bsz, n = a_feat.shape[:2]
        if valid_tokens is None:
            valid_tokens = np.ones((bsz, n), dtype=bool)
        valid = np.concatenate([np.ones((bsz, 1), dtype=bool), np.asarray(valid_tokens, dtype=bool)], axis=1)
        return self.encode(self.add_pos_class(a_feat, unk_mask), valid)


def encode_audio(seq, valid, encoder: AudioEncoder) -> EncodedAudio:
    return encoder.encode(seq, valid)
