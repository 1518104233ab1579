"""Accuracy, micro-F1 and macro-F1 for single- and multi-label classification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError

THRESHOLD = 0.5


def predict(probs, task: str) -> np.ndarray:
    """Class ids (argmax, lowest index wins ties) or a 0/1 matrix (``p >= 0.5``)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ShapeError(f"expected [B, M] probabilities, got {probs.shape}")
    if task == "single-label":
        return np.argmax(probs, axis=1)
    return (probs >= THRESHOLD).astype(np.int64)


def _as_indicator(values, num_classes: int) -> np.ndarray:
    values = np.asarray(values)
    if values.ndim == 1:
        if np.any(values < 0) or np.any(values >= num_classes):
            raise DataError(f"class id outside 0..{num_classes - 1}")
        out = np.zeros((len(values), num_classes), dtype=np.int64)
        out[np.arange(len(values)), values.astype(np.int64)] = 1
        return out
    if values.shape[1] != num_classes:
        raise ShapeError(f"indicator width {values.shape[1]} != {num_classes}")
    return (values != 0).astype(np.int64)


def _check(pred, gold):
    pred, gold = np.asarray(pred), np.asarray(gold)
    if len(gold) == 0:
        raise DataError("cannot evaluate an empty set")
    if pred.shape != gold.shape:
        raise ShapeError(f"prediction shape {pred.shape} != gold shape {gold.shape}")
    return pred, gold


def _num_classes(pred, gold, num_classes):
    if num_classes is not None:
        return num_classes
    if gold.ndim == 2:
        return gold.shape[1]
    return int(max(pred.max(), gold.max())) + 1


def confusion_counts(pred, gold, num_classes: int | None = None):
    """Per-class ``(tp, fp, fn)`` integer arrays."""
    pred, gold = _check(pred, gold)
    m = _num_classes(pred, gold, num_classes)
    p, g = _as_indicator(pred, m), _as_indicator(gold, m)
    tp = (p & g).sum(axis=0)
    fp = (p & (1 - g)).sum(axis=0)
    fn = ((1 - p) & g).sum(axis=0)
    return tp, fp, fn


def _f1(tp, fp, fn) -> np.ndarray:
    tp, fp, fn = (np.asarray(a, dtype=np.float64) for a in (tp, fp, fn))
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros_like(denom), where=denom > 0)


def accuracy(pred, gold) -> float:
    """Fraction correct; for multi-label rows, the fraction of exact set matches."""
    pred, gold = _check(pred, gold)
    if gold.ndim == 1:
        return float(np.mean(pred == gold))
    return float(np.mean(np.all((pred != 0) == (gold != 0), axis=1)))


def micro_f1(pred, gold, num_classes: int | None = None) -> float:
    tp, fp, fn = confusion_counts(pred, gold, num_classes)
    return float(_f1(tp.sum(), fp.sum(), fn.sum()))


def per_class_f1(pred, gold, num_classes: int | None = None) -> np.ndarray:
    return _f1(*confusion_counts(pred, gold, num_classes))


def macro_f1(pred, gold, num_classes: int | None = None) -> float:
    """Unweighted mean of per-class F1; a class with no support and no predictions scores 0."""
    return float(np.mean(per_class_f1(pred, gold, num_classes)))


@dataclass
class EvalReport:
    accuracy: float
    micro_f1: float
    macro_f1: float
    per_class_f1: list
    num_samples: int
    tp: list
    fp: list
    fn: list
    group_accuracy: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("accuracy", "micro_f1", "macro_f1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DataError(f"{name} {v} outside [0, 1]")
        if self.num_samples < 1:
            raise DataError("report needs at least one sample")

    def consistent(self) -> bool:
        """Micro/macro values agree with the stored confusion counts."""
        tp, fp, fn = (np.array(a) for a in (self.tp, self.fp, self.fn))
        micro = float(_f1(tp.sum(), fp.sum(), fn.sum()))
        per = _f1(tp, fp, fn)
        return np.isclose(micro, self.micro_f1, rtol=0, atol=1e-12) and np.isclose(per.mean(), self.macro_f1, rtol=0, atol=1e-12)


def group_accuracy(pred, gold, groups) -> dict:
    """Accuracy per group tag, sorted by tag; empty groups never appear."""
    pred, gold = _check(pred, gold)
    groups = list(groups)
    if len(groups) != len(gold):
        raise ShapeError(f"{len(groups)} group tags for {len(gold)} samples")
    tags = np.array(groups, dtype=object)
    out = {}
    for tag in sorted(set(groups)):
        sel = tags == tag
        out[tag] = accuracy(pred[sel], gold[sel])
    return out


def evaluate(pred, gold, num_classes: int, groups=None, meta=None) -> EvalReport:
    tp, fp, fn = confusion_counts(pred, gold, num_classes)
    per = _f1(tp, fp, fn)
    return EvalReport(
        accuracy=accuracy(pred, gold),
        micro_f1=float(_f1(tp.sum(), fp.sum(), fn.sum())),
        macro_f1=float(per.mean()),
        per_class_f1=[float(v) for v in per],
        num_samples=int(len(gold)),
        tp=[int(v) for v in tp],
        fp=[int(v) for v in fp],
        fn=[int(v) for v in fn],
        group_accuracy=group_accuracy(pred, gold, groups) if groups is not None else {},
        meta=dict(meta or {}),
    )


def evaluate_grouped(pred, gold, groups, num_classes: int | None = None, meta=None) -> EvalReport:
    pred, gold = _check(pred, gold)
    return evaluate(pred, gold, _num_classes(pred, gold, num_classes), groups, meta)
