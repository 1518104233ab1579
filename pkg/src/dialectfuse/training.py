"""Two-stage training: contrastive warm-up, then joint supervised training."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import RunConfig
from .data.checkpoint import Checkpoint
from .data.dataset import Dataset
from .errors import ConfigError, DataError
from .losses import bce_loss, ce_loss, contrastive_loss
from .metrics import EvalReport, evaluate, predict
from .model import Batch, TriModalModel
from .numerics.optim import AdamState, adam_step
from .numerics.rng import Rng
from .numerics.tensor import backward, no_grad

EVAL_BATCH = 100


@dataclass
class StageResult:
    model: TriModalModel
    checkpoint: Checkpoint
    losses: list = field(default_factory=list)
    history: list = field(default_factory=list)
    report: EvalReport | None = None


def build_model(run: RunConfig) -> TriModalModel:
    return TriModalModel(run.model, run.plan.seed)


def make_checkpoint(model: TriModalModel, run: RunConfig, stage: str, step: int, opt: AdamState | None = None, params=None) -> Checkpoint:
    plan = run.plan
    meta = {
        "config": run.to_dict(),
        "stage": stage,
        "step": int(step),
        "seed": plan.seed,
        "scale_mode": run.model.scale_mode,
        "ablation": asdict(plan.ablation),
        "dialects": list(plan.active_dialects),
    }
    optim = None
    if opt is not None:
        optim = {"hyper": opt.hyper(), "m": {k: v.copy() for k, v in opt.m.items()}, "v": {k: v.copy() for k, v in opt.v.items()}}
    return Checkpoint(params if params is not None else model.arrays(), meta, optim)


def model_from_checkpoint(ckpt: Checkpoint, run: RunConfig | None = None) -> tuple[TriModalModel, RunConfig]:
    """Rebuild the exact model a checkpoint was saved from.

    If ``run`` is given its model section must match the stored one.
    """
    stored = RunConfig.from_dict(ckpt.meta.get("config", {}))
    if run is not None and run.model != stored.model:
        raise ConfigError("checkpoint model configuration differs from the requested one")
    model = TriModalModel(stored.model, stored.plan.seed)
    model.load_arrays(ckpt.params)
    return model, run if run is not None else stored


def _step(model_params: dict, loss, opt: AdamState) -> float:
    value = float(loss.data)
    grads = backward(loss)
    by_id = {id(t): g for t, g in grads.items()}
    adam_step(model_params, {n: by_id[id(p)] for n, p in model_params.items() if id(p) in by_id}, opt)
    return value


def _batches(rng: Rng, idx: np.ndarray, size: int):
    perm = idx[rng.permutation(len(idx))]
    for start in range(0, len(perm), size):
        yield perm[start : start + size]


def warmup_stage(data: Dataset, run: RunConfig, model: TriModalModel | None = None, log=None) -> StageResult:
    """Contrastive alignment of the modality branches; the classifier is untouched.

    Args:
        log: optional callable receiving ``(step, loss)`` after every step.

    Raises:
        ConfigError: batch size below 2, or fewer than two enabled modalities.
    """
    plan = run.plan
    if plan.warmup_batch < 2:
        raise ConfigError("contrastive warm-up needs a batch size of at least 2")
    ablation = plan.ablation
    if len(ablation.enabled()) < 2:
        raise ConfigError("contrastive warm-up needs at least two enabled modalities")
    dialects = plan.active_dialects
    data.check_compatible(run.model, dialects)
    model = model if model is not None else build_model(run)
    trainable = {n: p for n, p in model.parameters().items() if not n.startswith("classifier.")}
    opt = AdamState(lr=plan.warmup_lr)
    rng = Rng(plan.seed).spawn(11)
    train_idx = data.split("train")
    if len(train_idx) < 2:
        raise DataError("contrastive warm-up needs at least two training samples")
    size = min(plan.warmup_batch, len(train_idx))
    losses = []
    stream = iter(())
    for step in range(plan.warmup_steps):
        idx = next(stream, None)
        if idx is None or len(idx) < 2:
            stream = _batches(rng, train_idx, size)
            idx = next(stream)
        batch = data.batch(idx, dialects, ablation.use_translation)
        feats = model.features(batch, ablation, dialects)
        loss = contrastive_loss(feats["audio"], feats["vision"], feats["text"], model.contrastive)
        losses.append(_step(trainable, loss, opt))
        if log is not None:
            log(step, losses[-1])
    ckpt = make_checkpoint(model, run, "warmup", plan.warmup_steps, opt)
    return StageResult(model, ckpt, losses)


def supervised_loss(model: TriModalModel, batch: Batch, run: RunConfig):
    plan = run.plan
    feats = model.features(batch, plan.ablation, plan.active_dialects)
    probs = model.predict_proba(feats, len(batch))
    if run.model.task == "single-label":
        labels = np.asarray(batch.labels)
        if labels.ndim != 1:
            raise DataError("single-label training needs one class id per sample")
        loss = ce_loss(probs, labels)
    else:
        labels = np.asarray(batch.labels)
        if labels.ndim != 2:
            raise DataError("multi-label training needs a 0/1 label matrix")
        loss = bce_loss(probs, labels)
    if plan.aux_contrastive_weight > 0 and len(batch) >= 2 and len(plan.ablation.enabled()) >= 2:
        aux = contrastive_loss(feats["audio"], feats["vision"], feats["text"], model.contrastive)
        loss = loss + aux * plan.aux_contrastive_weight
    return loss


def predict_proba(model: TriModalModel, data: Dataset, idx, run: RunConfig) -> np.ndarray:
    plan = run.plan
    out = []
    with no_grad():
        for start in range(0, len(idx), EVAL_BATCH):
            batch = data.batch(idx[start : start + EVAL_BATCH], plan.active_dialects, plan.ablation.use_translation)
            out.append(model.forward(batch, plan.ablation, plan.active_dialects).data)
    return np.concatenate(out, axis=0)


def evaluate_split(model: TriModalModel, data: Dataset, run: RunConfig, split: str = "val", grouped: bool = False) -> EvalReport:
    idx = data.split(split)
    pred = predict(predict_proba(model, data, idx, run), run.model.task)
    gold = data.labels[idx]
    groups = [data.regions[i] for i in idx] if grouped else None
    meta = {
        "split": split,
        "ablation": run.plan.ablation.tag(),
        "flags": asdict(run.plan.ablation),
        "dialects": "+".join(run.plan.active_dialects),
        "seed": run.plan.seed,
        "task": run.model.task,
    }
    return evaluate(pred, gold, run.model.num_classes, groups, meta)


def _selection_score(report: EvalReport, task: str) -> float:
    return report.accuracy if task == "single-label" else report.macro_f1


def train_stage2(data: Dataset, run: RunConfig, warm: Checkpoint | TriModalModel | None = None, log=None) -> StageResult:
    """Joint supervised training; keeps the parameters of the best validation epoch.

    Args:
        warm: warm-up checkpoint or model to start from (fresh initialisation if None).
        log: optional callable receiving each epoch's history row.
    """
    plan = run.plan
    dialects = plan.active_dialects
    data.check_compatible(run.model, dialects)
    if isinstance(warm, TriModalModel):
        model = warm
    elif isinstance(warm, Checkpoint):
        model, _ = model_from_checkpoint(warm, run)
    else:
        model = build_model(run)
    params = model.parameters()
    opt = AdamState(lr=plan.lr)
    rng = Rng(plan.seed).spawn(12)
    train_idx = data.split("train")
    data.split("val")
    best = (-1.0, None, 0, None, None)
    losses, history = [], []
    for epoch in range(1, plan.epochs + 1):
        epoch_losses = []
        for idx in _batches(rng, train_idx, plan.batch_size):
            batch = data.batch(idx, dialects, plan.ablation.use_translation)
            epoch_losses.append(_step(params, supervised_loss(model, batch, run), opt))
        losses.extend(epoch_losses)
        report = evaluate_split(model, data, run, "val")
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_losses)),
            "val_accuracy": report.accuracy,
            "val_micro_f1": report.micro_f1,
            "val_macro_f1": report.macro_f1,
        }
        history.append(row)
        if log is not None:
            log(row)
        score = _selection_score(report, run.model.task)
        if score > best[0]:
            best = (score, model.arrays(), epoch, report, copy.deepcopy(opt))
    if best[1] is not None:
        model.load_arrays(best[1])
        report, opt = best[3], best[4]
    else:
        report = evaluate_split(model, data, run, "val")
    ckpt = make_checkpoint(model, run, "supervised", best[2], opt)
    ckpt.meta["best_epoch"] = best[2]
    return StageResult(model, ckpt, losses, history, report)


def run_pipeline(data: Dataset, run: RunConfig, log=None) -> tuple[StageResult | None, StageResult]:
    """Warm-up (skipped when fewer than two modalities are enabled) then stage 2."""
    warm = None
    model = None
    if run.plan.warmup_steps > 0 and len(run.plan.ablation.enabled()) >= 2:
        warm = warmup_stage(data, run)
        model = warm.model
    return warm, train_stage2(data, run, model, log=log)
