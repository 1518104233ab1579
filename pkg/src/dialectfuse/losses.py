"""Contrastive warm-up loss, fusion classifier and the stage-2 losses."""

from __future__ import annotations

import itertools

import numpy as np

from .errors import DataError, NumericalFault, ShapeError
from .numerics import tensor as T
from .numerics.nn import Linear, Module
from .numerics.rng import Rng
from .numerics.tensor import Tensor

LOG_CLAMP = 1e-12
PAIR_ORDER = (("audio", "vision"), ("audio", "text"), ("vision", "text"))


class ContrastiveHead(Module):
    """Learnable similarity scale ``s = exp(log_scale) > 0`` and bias ``b``."""

    def __init__(self, variant: str = "pairwise", scale: float = 1.0, bias: float = 0.0):
        if variant not in ("pairwise", "row-softmax"):
            raise ValueError(f"unknown contrastive variant {variant!r}")
        self.variant = variant
        self.log_scale = T.parameter(np.array([np.log(scale)]))
        self.bias = T.parameter(np.array([bias]))

    @property
    def scale(self) -> Tensor:
        return T.exp(self.log_scale)


def cosine_matrix(x, y) -> Tensor:
    """``[B_x, B_y]`` cosine similarities; ``cosine_matrix(y, x)`` is the exact transpose."""
    x, y = T.as_tensor(x), T.as_tensor(y)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ShapeError(f"cosine similarity needs [B, d] inputs, got {x.shape} and {y.shape}")
    nx = np.sqrt(np.sum(x.data * x.data, axis=1))
    ny = np.sqrt(np.sum(y.data * y.data, axis=1))
    if np.any(nx == 0) or np.any(ny == 0):
        raise NumericalFault("cosine similarity undefined for a zero-norm feature vector")
    xn = x / T.sqrt((x * x).sum(axis=1, keepdims=True))
    yn = y / T.sqrt((y * y).sum(axis=1, keepdims=True))
    bx, by, d = x.shape[0], y.shape[0], x.shape[1]
    return (xn.reshape(bx, 1, d) * yn.reshape(1, by, d)).sum(axis=-1)


def pairwise_term(x, y, head: ContrastiveHead) -> Tensor:
    """One cosine-similarity contrastive term between two feature batches.

    Pairwise variant: every (i, j) pair is a binary match/no-match decision with
    ``p_ij = sigmoid(s * cos(x_i, y_j) + b)``, target ``i == j``, averaged over all B^2 pairs.
    Row-softmax variant: symmetric cross-entropy over rows and columns of ``s * cos``.
    """
    x, y = T.as_tensor(x), T.as_tensor(y)
    bsz = x.shape[0]
    if bsz < 2 or y.shape[0] != bsz:
        raise ShapeError(f"contrastive loss needs matching batches of size >= 2, got {x.shape[0]}, {y.shape[0]}")
    logits = cosine_matrix(x, y) * head.scale + head.bias
    eye = np.eye(bsz)
    if head.variant == "pairwise":
        # -log sigmoid(z) on the diagonal, -log(1 - sigmoid(z)) elsewhere
        signed = logits * T.as_tensor(1.0 - 2.0 * eye)
        return T.ordered_sum(T.softplus(signed)) * (1.0 / (bsz * bsz))
    rows = _log_softmax(logits, axis=1)
    cols = _log_softmax(logits, axis=0)
    diag = T.as_tensor(eye)
    return -(T.ordered_sum(rows * diag) + T.ordered_sum(cols * diag)) * (0.5 / bsz)


def _log_softmax(z: Tensor, axis: int) -> Tensor:
    m = np.max(z.data, axis=axis, keepdims=True)
    shifted = z - T.as_tensor(m)
    return shifted - T.log(T.exp(shifted).sum(axis=axis, keepdims=True))


def contrastive_loss(fa, fv, ft, head: ContrastiveHead) -> Tensor:
    """Sum of the pairwise terms over every pair of the supplied modalities.

    Any of ``fa``/``fv``/``ft`` may be None (ablated); with all three present this is
    ``L(audio, vision) + L(audio, text) + L(vision, text)``.
    """
    feats = {"audio": fa, "vision": fv, "text": ft}
    terms = [pairwise_term(feats[a], feats[b], head) for a, b in PAIR_ORDER if feats[a] is not None and feats[b] is not None]
    if not terms:
        raise ShapeError("contrastive loss needs at least two modalities")
    return T.ordered_sum(T.stack(terms))


def pair_terms(feats: dict, head: ContrastiveHead) -> dict:
    return {
        f"{a}-{b}": pairwise_term(feats[a], feats[b], head)
        for a, b in itertools.combinations(("audio", "vision", "text"), 2)
        if feats.get(a) is not None and feats.get(b) is not None
    }


class FusionClassifier(Module):
    """Linear map from ``[text ; audio ; vision]`` (width ``3 d_f``) to ``M`` classes."""

    def __init__(self, d_f: int, num_classes: int, task: str, rng: Rng):
        self.d_f, self.num_classes, self.task = d_f, num_classes, task
        self.fc = Linear(3 * d_f, num_classes, rng)

    def logits(self, ft, fa, fv) -> Tensor:
        parts = [T.as_tensor(f) for f in (ft, fa, fv)]
        for p in parts:
            if p.ndim != 2 or p.shape[1] != self.d_f:
                raise ShapeError(f"modality feature {p.shape} does not have width {self.d_f}")
        return self.fc(T.concat(parts, axis=1))

    def forward(self, ft, fa, fv) -> Tensor:
        z = self.logits(ft, fa, fv)
        return T.softmax(z) if self.task == "single-label" else T.sigmoid(z)


def classify(ft, fa, fv, params: FusionClassifier) -> Tensor:
    return params(ft, fa, fv)


def ce_loss(probs, labels) -> Tensor:
    """Mean negative log-probability of the gold class, log clamped at ln(1e-12)."""
    probs = T.as_tensor(probs)
    labels = np.asarray(labels, dtype=np.int64)
    bsz, m = probs.shape
    if labels.shape != (bsz,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {bsz}")
    if np.any(labels < 0) or np.any(labels >= m):
        raise DataError(f"class index out of range 0..{m - 1}")
    picked = probs[np.arange(bsz), labels]
    return -T.log(T.clamp_min(picked, LOG_CLAMP)).sum() * (1.0 / bsz)


def bce_loss(probs, targets) -> Tensor:
    """Mean over all ``B * M`` entries of the binary cross-entropy, logs clamped."""
    probs = T.as_tensor(probs)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != probs.shape:
        raise ShapeError(f"targets shape {y.shape} does not match predictions {probs.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("multi-label targets must be 0/1")
    yt = T.as_tensor(y)
    pos = yt * T.log(T.clamp_min(probs, LOG_CLAMP))
    negp = T.log(T.clamp_min(1.0 - probs, LOG_CLAMP)) * T.as_tensor(1.0 - y)
    return -(pos + negp).sum() * (1.0 / y.size)
