"""Load a manifest and every file it references into memory, then serve batches."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from ..audio import assemble_batch
from ..config import ModelConfig
from ..errors import ConfigError, DataError
from ..model import Batch
from .manifest import Manifest, read_manifest
from .pft import read_tensor
from .tables import load_feature_table


@dataclass
class Dataset:
    root: str
    manifest: Manifest
    tables: dict
    audio: dict  # dialect -> (features [N, n, d_a], valid [N, n], unk [N, n])
    latents: np.ndarray
    text: np.ndarray
    text_orig: np.ndarray | None
    labels: np.ndarray  # [N] class ids, or [N, M] 0/1 for multi-label
    regions: list
    splits: np.ndarray

    @property
    def task(self) -> str:
        return self.manifest.task

    @property
    def num_classes(self) -> int:
        return self.manifest.num_classes

    @property
    def ids(self) -> list:
        return self.manifest.ids()

    def __len__(self) -> int:
        return len(self.manifest.records)

    def split(self, name: str) -> np.ndarray:
        idx = np.flatnonzero(self.splits == name)
        if idx.size == 0:
            raise DataError(f"dataset has no {name!r} samples")
        return idx

    def batch(self, idx, dialects, translation: bool = True) -> Batch:
        idx = np.asarray(idx, dtype=np.int64)
        audio = {}
        for d in dialects:
            if d not in self.audio:
                raise DataError(f"dataset has no {d!r} audio table (have {sorted(self.audio)})")
            feats, valid, unk = self.audio[d]
            audio[d] = (feats[idx], valid[idx], unk[idx])
        text = self.text if translation or self.text_orig is None else self.text_orig
        return Batch(
            ids=[self.manifest.records[i]["id"] for i in idx],
            audio=audio,
            latents=self.latents[idx],
            text=text[idx],
            labels=self.labels[idx],
            regions=[self.regions[i] for i in idx],
        )

    def check_compatible(self, config: ModelConfig, dialects) -> None:
        """Reject any geometry mismatch before a training step runs."""
        if config.task != self.task:
            raise ConfigError(f"model task {config.task!r} does not match dataset task {self.task!r}")
        if config.num_classes != self.num_classes:
            raise ConfigError(f"model has {config.num_classes} classes, dataset has {self.num_classes}")
        for d in dialects:
            if d not in self.tables:
                raise ConfigError(f"dataset has no {d!r} audio table")
            if self.tables[d].dim != config.d_a:
                raise ConfigError(f"{d}: feature width {self.tables[d].dim} != model d_a {config.d_a}")
        if tuple(self.latents.shape[1:]) != tuple(config.latent_shape):
            raise ConfigError(f"latent shape {self.latents.shape[1:]} != model {config.latent_shape}")
        if self.text.shape[1] != config.d_text:
            raise ConfigError(f"text width {self.text.shape[1]} != model d_text {config.d_text}")
        longest = self.audio[dialects[0]][0].shape[1]
        if longest > config.max_len:
            raise ConfigError(f"longest sentence {longest} exceeds model max_len {config.max_len}")


def _resolve(root: str, rel: str) -> str:
    return rel if os.path.isabs(rel) else os.path.join(root, rel)


def load_dataset(path, strict: bool = False) -> Dataset:
    """Load a corpus from its directory or manifest path, validating all geometry."""
    path = os.fspath(path)
    manifest_path = os.path.join(path, "manifest.jsonl") if os.path.isdir(path) else path
    root = os.path.dirname(os.path.abspath(manifest_path))
    if not os.path.exists(manifest_path):
        raise DataError(f"no manifest at {manifest_path}")
    man = read_manifest(manifest_path)
    head = man.header
    recs = man.records
    sentences = [r["chars"] for r in recs]
    longest = max(len(s) for s in sentences)

    tables, audio = {}, {}
    for dialect, decl in sorted(head["audio"].items()):
        table = load_feature_table(_resolve(root, decl["index"]), _resolve(root, decl["matrix"]), dialect, decl["dim"])
        tables[dialect] = table
        feats, valid, unk, _ = assemble_batch(sentences, table, max_len=max(longest, 1), strict=strict)
        audio[dialect] = (feats, valid, unk)

    shape = tuple(head["latent_shape"])
    latent_dir = _resolve(root, head.get("latent_dir", "latents"))
    latents = np.empty((len(recs),) + shape)
    for i, rec in enumerate(recs):
        lat = read_tensor(os.path.join(latent_dir, f"{rec['id']}.pft"))
        if lat.shape != shape:
            raise DataError(f"latent for {rec['id']} has shape {lat.shape}, header declares {shape}")
        latents[i] = lat

    text_decl = head.get("text")
    if not text_decl:
        raise DataError("header declares no text embeddings")
    with open(_resolve(root, text_decl["index"]), encoding="utf-8") as fh:
        text_ids = json.load(fh)
    row_of = {rid: i for i, rid in enumerate(text_ids)}
    if len(row_of) != len(text_ids):
        raise DataError("duplicate id in text index")
    missing = [r["id"] for r in recs if r["id"] not in row_of]
    if missing:
        raise DataError(f"text embeddings missing for {missing[:3]}")
    order = np.array([row_of[r["id"]] for r in recs])

    def load_text(rel):
        mat = read_tensor(_resolve(root, rel))
        if mat.ndim != 2 or mat.shape[1] != head["d_text"] or mat.shape[0] != len(text_ids):
            raise DataError(f"text matrix {rel} has shape {mat.shape}, expected [{len(text_ids)}, {head['d_text']}]")
        return mat[order]

    text = load_text(text_decl["matrix"])
    text_orig = load_text(text_decl["orig"]) if text_decl.get("orig") else None

    m = head["num_classes"]
    if man.task == "single-label":
        labels = np.array([r["label"] for r in recs], dtype=np.int64)
    else:
        labels = np.zeros((len(recs), m))
        for i, r in enumerate(recs):
            labels[i, r["labels"]] = 1.0
    return Dataset(
        root=root,
        manifest=man,
        tables=tables,
        audio=audio,
        latents=latents,
        text=text,
        text_orig=text_orig,
        labels=labels,
        regions=[r.get("region", "") for r in recs],
        splits=np.array([r.get("split", "train") for r in recs]),
    )
