"""Whole-model gradient check against central finite differences."""

from __future__ import annotations

import numpy as np

from .config import Ablation, ModelConfig
from .losses import bce_loss, ce_loss, contrastive_loss
from .model import PARAM_GROUPS, Batch, TriModalModel, group_of
from .numerics.gradcheck import REL_TOL, check_gradients
from .numerics.rng import Rng

TINY = ModelConfig(
    d=8,
    heads=2,
    layers=2,
    d_f=8,
    d_a=6,
    max_len=8,
    latent_shape=(4, 8, 8),
    d_text=8,
    channels=(4, 4, 4),
    num_classes=5,
)
TINY_LENGTH = 4
TINY_BATCH = 3
DIALECT_PAIR = ("mandarin", "cantonese")


def random_batch(config: ModelConfig, rng: Rng, batch: int = TINY_BATCH, length: int = TINY_LENGTH) -> Batch:
    """Random inputs of the configured geometry; one padded position exercises masking."""
    audio = {}
    for dialect in DIALECT_PAIR:
        valid = np.ones((batch, length), dtype=bool)
        valid[-1, -1] = False
        feats = rng.normal((batch, length, config.d_a)) * valid[..., None]
        unk = rng.uniform((batch, length)) < 0.25
        audio[dialect] = (feats, valid, unk & valid)
    if config.task == "single-label":
        labels = rng.integers(0, config.num_classes, (batch,))
    else:
        labels = (rng.uniform((batch, config.num_classes)) < 0.4).astype(float)
    return Batch(
        ids=[f"g{i}" for i in range(batch)],
        audio=audio,
        latents=rng.normal((batch,) + tuple(config.latent_shape)),
        text=rng.normal((batch, config.d_text)),
        labels=labels,
    )


def gradcheck_model(config: ModelConfig = TINY, seed: int = 0, h: float = 1e-6) -> tuple[dict, dict]:
    """Check every parameter of a freshly initialised model on a random batch.

    The loss is classification cross-entropy plus the three-pair contrastive
    term, so every parameter group receives gradient.

    Returns:
        ``(worst error per group, worst error per parameter)``.
    """
    model = TriModalModel(config, seed)
    batch = random_batch(config, Rng(seed).spawn(99))
    ablation = Ablation()

    def loss():
        feats = model.features(batch, ablation, DIALECT_PAIR)
        probs = model.predict_proba(feats, len(batch))
        sup = ce_loss(probs, batch.labels) if config.task == "single-label" else bce_loss(probs, batch.labels)
        return sup + contrastive_loss(feats["audio"], feats["vision"], feats["text"], model.contrastive)

    per_param = check_gradients(loss, model.parameters(), h)
    groups = {name: 0.0 for name, _ in PARAM_GROUPS}
    for name, err in per_param.items():
        g = group_of(name)
        groups[g] = max(groups[g], err)
    return groups, per_param


def failing_groups(groups: dict, tol: float = REL_TOL) -> list:
    return [g for g, err in groups.items() if not err <= tol]
