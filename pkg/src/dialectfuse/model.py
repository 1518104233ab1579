"""The full tri-modal model: audio (with dialect fusion), vision, text, classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import AudioEncoder, EncodedAudio
from .config import Ablation, ModelConfig
from .errors import DataError, ShapeError
from .fusion import DialectCrossAttention
from .heads import AudioProjection, TextAdapter, VisualCNN, zero_feature
from .losses import ContrastiveHead, FusionClassifier
from .numerics.nn import Module
from .numerics.rng import Rng
from .numerics.tensor import Tensor


@dataclass
class Batch:
    """One mini-batch of model inputs.

    ``audio`` maps dialect name to ``(features [B, n, d_a], valid [B, n], unk [B, n])``.
    """

    ids: list
    audio: dict = field(default_factory=dict)
    latents: np.ndarray | None = None
    text: np.ndarray | None = None
    labels: np.ndarray | None = None
    regions: list | None = None

    def __len__(self) -> int:
        return len(self.ids)


# Parameter groups reported by gradient checking, keyed by name prefix.
PARAM_GROUPS = (
    ("audio-encoder", ("audio.",)),
    ("cross-attention-qkv", ("fusion.q.", "fusion.k.", "fusion.v.")),
    ("fusion-projection", ("fusion.out.", "audio_proj.")),
    ("visual-cnn", ("vision.",)),
    ("text-adapter", ("text.",)),
    ("classifier", ("classifier.",)),
    ("contrastive-scale-bias", ("contrastive.",)),
)


def group_of(name: str) -> str:
    for group, prefixes in PARAM_GROUPS:
        if name.startswith(prefixes):
            return group
    raise KeyError(name)


class TriModalModel(Module):
    def __init__(self, config: ModelConfig, seed: int):
        self.config = config
        rng = Rng(seed)
        c = config
        self.audio = AudioEncoder(c.d_a, c.d, c.heads, c.layers, rng.spawn(1), c.max_len)
        self.fusion = DialectCrossAttention(c.d, rng.spawn(2), c.scale_mode)
        self.audio_proj = AudioProjection(c.d, c.d_f, rng.spawn(3))
        self.vision = VisualCNN(c.latent_shape, c.d_f, rng.spawn(4), c.channels)
        self.text = TextAdapter(c.d_text, c.d_f, rng.spawn(5))
        self.classifier = FusionClassifier(c.d_f, c.num_classes, c.task, rng.spawn(6))
        self.contrastive = ContrastiveHead(c.contrastive_variant)

    def encode_dialect(self, batch: Batch, dialect: str) -> EncodedAudio:
        if dialect not in batch.audio:
            raise DataError(f"batch carries no {dialect!r} audio")
        feats, valid, unk = batch.audio[dialect]
        return self.audio(feats, valid, unk)

    def audio_feature(self, batch: Batch, dialects) -> Tensor:
        """Sentence-level audio feature (width ``d``): fused for two dialects, pooled for one."""
        encoded = [self.encode_dialect(batch, d) for d in dialects]
        if len(encoded) == 1:
            return encoded[0].pooled
        return self.fusion(encoded[0], encoded[1])

    def features(self, batch: Batch, ablation: Ablation, dialects) -> dict:
        """Modality features of width ``d_f`` for every enabled branch (others are None)."""
        out = {"audio": None, "vision": None, "text": None}
        if ablation.use_audio:
            out["audio"] = self.audio_proj(self.audio_feature(batch, dialects))
        if ablation.use_vision:
            if batch.latents is None:
                raise DataError("batch carries no visual latents")
            out["vision"] = self.vision(batch.latents)
        if ablation.use_text:
            if batch.text is None:
                raise DataError("batch carries no text embeddings")
            out["text"] = self.text(batch.text)
        return out

    def predict_proba(self, feats: dict, batch_size: int) -> Tensor:
        """Classifier probabilities; disabled branches enter as zero vectors."""
        d_f = self.config.d_f
        parts = [feats[m] if feats[m] is not None else zero_feature(batch_size, d_f) for m in ("text", "audio", "vision")]
        for p in parts:
            if p.shape[0] != batch_size:
                raise ShapeError(f"feature batch {p.shape[0]} != {batch_size}")
        return self.classifier(*parts)

    def forward(self, batch: Batch, ablation: Ablation, dialects) -> Tensor:
        return self.predict_proba(self.features(batch, ablation, dialects), len(batch))

    def arrays(self) -> dict:
        return {name: p.data.copy() for name, p in self.parameters().items()}
