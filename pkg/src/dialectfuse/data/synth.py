"""Planted-signal synthetic corpus.

Every sample starts from a class ``y``. Each modality then carries ``y`` with a
tunable strength:

* audio: the two hemistich-final characters. A fraction of lines rhyme
  exactly in class ``y``; the rest are near-rhymes whose finals sit in ``y`` and
  a neighbouring class on the class ring, so audio alone narrows the label to
  two candidates. The audio strength equals the accuracy a Bayes-optimal rule
  reading audio alone attains (for strengths of at least 0.5). Below 0.5 some
  lines carry two random, label-independent finals.
* vision: a per-channel mean shift of the latent toward a class prototype
  (simplex vertices, all classes equidistant), plus per-sample shift noise and
  pixel noise.
* text: a class point on a circle embedded in a random plane, plus isotropic
  noise. Neighbouring classes sit close on the circle, so text is weakest
  exactly where audio is ambiguous.

Each character's audio row holds a rhyme one-hot, a tone one-hot and timbre
noise. A dialect sees that row through its own orthogonal distortion plus noise.
With ``rhyme_corruption`` > 0 each dialect merges a disjoint set of characters
into one indistinguishable row, so only fusing dialects recovers every rhyme.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import expm

from ..audio import UNK
from ..config import DIALECTS, TASKS
from ..errors import ConfigError
from ..numerics.rng import Rng
from .pft import write_tensor

SPLITS = ("train", "val", "test")
LINE_KINDS = ("exact", "near", "free")


@dataclass(frozen=True)
class SynthSpec:
    vocab_size: int = 240
    sentence_length: int = 8
    rhyme_classes: int = 5
    tone_classes: int = 4
    feature_dim: int = 16
    audio_signal: float = 0.9
    visual_signal: float = 0.5
    text_signal: float = 0.4
    num_classes: int = 5
    seed: int = 0
    task: str = "single-label"
    dialects: tuple = ("mandarin", "cantonese")
    distortion: float = 0.1
    rhyme_corruption: float = 0.0
    n_train: int = 2000
    n_val: int = 400
    n_test: int = 0
    latent_shape: tuple = (4, 16, 16)
    d_text: int = 32
    visual_gain: float = 4.0
    text_gain: float = 2.0
    translation_gain: float = 0.5
    extra_label_rate: float = 0.3
    regions: tuple = ("north", "south")

    def __post_init__(self):
        object.__setattr__(self, "dialects", tuple(self.dialects))
        object.__setattr__(self, "latent_shape", tuple(int(s) for s in self.latent_shape))
        object.__setattr__(self, "regions", tuple(self.regions))
        for name in ("audio_signal", "visual_signal", "text_signal", "rhyme_corruption", "extra_label_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        if self.rhyme_classes < self.num_classes:
            raise ConfigError("need at least one rhyme class per label class")
        if self.feature_dim < self.rhyme_classes + self.tone_classes:
            raise ConfigError(f"feature_dim {self.feature_dim} cannot hold {self.rhyme_classes} rhyme + {self.tone_classes} tone slots")
        if self.sentence_length < 2 or self.sentence_length % 2:
            raise ConfigError("sentence length must be even and at least 2")
        if self.vocab_size < 2 * self.rhyme_classes:
            raise ConfigError("vocabulary too small for the rhyme classes")
        if not self.dialects or len(set(self.dialects)) != len(self.dialects):
            raise ConfigError(f"dialects must be distinct, got {self.dialects}")
        for d in self.dialects:
            if d not in DIALECTS:
                raise ConfigError(f"unknown dialect {d!r}")
        if self.rhyme_corruption * len(self.dialects) > 1.0:
            raise ConfigError("complementary corruption sets cannot be disjoint at this rate")
        if min(self.n_train, self.n_val, self.n_test) < 0 or self.n_train + self.n_val + self.n_test == 0:
            raise ConfigError("split sizes must be non-negative and not all zero")
        if len(self.latent_shape) != 3 or min(self.latent_shape) < 1:
            raise ConfigError(f"latent shape must be C x H x W, got {self.latent_shape}")
        if self.d_text < 2:
            raise ConfigError("text embeddings need at least two dimensions")
        if min(self.distortion, self.visual_gain, self.text_gain, self.translation_gain) < 0:
            raise ConfigError("gains and distortion must be non-negative")
        if not self.regions:
            raise ConfigError("need at least one region tag")

    @property
    def final_positions(self) -> tuple[int, int]:
        n = self.sentence_length
        return n // 2 - 1, n - 1

    def line_kind_probs(self) -> np.ndarray:
        """Probabilities of exact rhyme, near-rhyme and label-free finals."""
        s = self.audio_signal
        if s >= 0.5:
            return np.array([2 * s - 1, 2 - 2 * s, 0.0])
        return np.array([0.0, 2 * s, 1 - 2 * s])

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthCorpus:
    """In-memory corpus as written to disk, plus the planted ground truth."""

    spec: SynthSpec
    tokens: list
    char_rhyme: np.ndarray
    char_tone: np.ndarray
    tables: dict
    corrupted: dict
    records: list
    line_kind: np.ndarray
    latents: np.ndarray
    text: np.ndarray
    text_orig: np.ndarray
    vision_protos: np.ndarray
    text_protos: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r["label"] if "label" in r else r["labels"][0] for r in self.records])


def _simplex(m: int, dim: int, rng: Rng) -> np.ndarray:
    """``m`` unit vectors in ``dim`` dimensions, equidistant when ``dim >= m - 1``."""
    if dim >= m - 1:
        centred = np.eye(m) - 1.0 / m
        _, _, vt = np.linalg.svd(centred)
        protos = np.zeros((m, dim))
        protos[:, : m - 1] = centred @ vt[: m - 1].T
    else:
        protos = rng.normal((m, dim))
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def _orthogonal(dim: int, amount: float, rng: Rng) -> np.ndarray:
    a = rng.normal((dim, dim), std=1.0 / np.sqrt(dim))
    return expm(amount * (a - a.T))


def _char_tables(spec: SynthSpec, rng: Rng):
    v, r, t, d = spec.vocab_size, spec.rhyme_classes, spec.tone_classes, spec.feature_dim
    rhyme = (np.arange(v) % r)[rng.permutation(v)]
    tone = rng.integers(0, t, (v,))
    base = np.zeros((v, d))
    base[np.arange(v), rhyme] = 1.0
    base[np.arange(v), r + tone] = 1.0
    base[:, r + t :] = rng.normal((v, d - r - t), std=0.5)

    # the same share of every rhyme class, so a merged final says nothing about the class
    members = [np.flatnonzero(rhyme == c) for c in range(r)]
    members = [m[rng.permutation(len(m))] for m in members]
    tables, corrupted = {}, {}
    for k, dialect in enumerate(spec.dialects):
        drng = rng.spawn(100 + k)
        rows = base + spec.distortion * drng.normal((v, d), std=0.1)
        per = [int(round(spec.rhyme_corruption * len(m))) for m in members]
        bad = np.sort(np.concatenate([m[k * n : (k + 1) * n] for m, n in zip(members, per)])).astype(np.int64)
        if len(bad):
            # merged final: the whole row collapses to one shared pattern
            merged = np.concatenate([np.full(r, 1.0 / r), np.full(t, 1.0 / t), drng.normal((d - r - t,), std=0.5)])
            rows[bad] = merged
        rows = rows @ _orthogonal(d, spec.distortion, drng)
        tables[dialect] = np.vstack([np.zeros((1, d)), rows])  # row 0 is <unk>
        corrupted[dialect] = bad
    return rhyme, tone, tables, corrupted


def _finals(spec: SynthSpec, y: np.ndarray, rng: Rng):
    m = spec.num_classes
    n = len(y)
    u = rng.uniform((n,))
    cum = np.cumsum(spec.line_kind_probs())
    kind = np.minimum(np.searchsorted(cum, u, side="right"), 2)
    step = rng.choice(np.array([-1, 1]), (n,))
    swap = rng.uniform((n,)) < 0.5
    free_a = rng.integers(0, m, (n,))
    free_b = (free_a + rng.integers(1, m, (n,))) % m
    first = y.copy()
    second = y.copy()
    near = kind == 1
    second[near] = (y[near] + step[near]) % m
    free = kind == 2
    first[free], second[free] = free_a[free], free_b[free]
    first[swap], second[swap] = second[swap], first[swap].copy()
    return kind, first, second


def generate(spec: SynthSpec) -> SynthCorpus:
    """Build the corpus in memory; a pure function of ``spec``."""
    rng = Rng(spec.seed)
    rhyme, tone, tables, corrupted = _char_tables(spec, rng.spawn(1))
    tokens = [f"c{i:04d}" for i in range(spec.vocab_size)]
    m = spec.num_classes
    n_total = spec.n_train + spec.n_val + spec.n_test

    lrng = rng.spawn(2)
    y = lrng.integers(0, m, (n_total,))
    extra = np.full(n_total, -1)
    if spec.task == "multi-label":
        has_extra = lrng.uniform((n_total,)) < spec.extra_label_rate
        other = (y + lrng.integers(1, m, (n_total,))) % m
        extra[has_extra] = other[has_extra]
    regions = lrng.choice(np.arange(len(spec.regions)), (n_total,))

    arng = rng.spawn(3)
    kind, first, second = _finals(spec, y, arng)
    by_rhyme = [np.flatnonzero(rhyme == c) for c in range(spec.rhyme_classes)]
    n = spec.sentence_length
    chars = arng.integers(0, spec.vocab_size, (n_total, n))
    p1, p2 = spec.final_positions
    pick1 = arng.uniform((n_total,))
    pick2 = arng.uniform((n_total,))
    for i in range(n_total):
        pool1, pool2 = by_rhyme[first[i]], by_rhyme[second[i]]
        chars[i, p1] = pool1[int(pick1[i] * len(pool1))]
        chars[i, p2] = pool2[int(pick2[i] * len(pool2))]

    vrng = rng.spawn(4)
    c, h, w = spec.latent_shape
    vision_protos = _simplex(m, c, vrng)
    shift = spec.visual_gain * spec.visual_signal * vision_protos[y]
    if spec.task == "multi-label":
        shift = shift + spec.visual_gain * spec.visual_signal * np.where(extra[:, None] >= 0, vision_protos[np.maximum(extra, 0)], 0.0)
    shift = shift + vrng.normal((n_total, c))
    latents = shift[:, :, None, None] + vrng.normal((n_total, c, h, w))

    trng = rng.spawn(5)
    plane, _ = np.linalg.qr(trng.normal((spec.d_text, 2)))
    ang = 2.0 * np.pi * np.arange(m) / m
    text_protos = np.stack([np.cos(ang), np.sin(ang)], axis=1) @ plane.T
    signal = spec.text_gain * spec.text_signal * text_protos[y]
    text = signal + trng.normal((n_total, spec.d_text))
    text_orig = spec.translation_gain * signal + trng.normal((n_total, spec.d_text))

    split_of = np.repeat(np.arange(3), [spec.n_train, spec.n_val, spec.n_test])
    records = []
    for i in range(n_total):
        rec = {"id": f"s{i:05d}", "chars": [tokens[j] for j in chars[i]]}
        if spec.task == "single-label":
            rec["label"] = int(y[i])
        else:
            rec["labels"] = sorted({int(y[i])} | ({int(extra[i])} if extra[i] >= 0 else set()))
        rec["region"] = spec.regions[regions[i]]
        rec["split"] = SPLITS[split_of[i]]
        records.append(rec)

    return SynthCorpus(
        spec=spec,
        tokens=tokens,
        char_rhyme=rhyme,
        char_tone=tone,
        tables=tables,
        corrupted=corrupted,
        records=records,
        line_kind=kind,
        latents=latents,
        text=text,
        text_orig=text_orig,
        vision_protos=vision_protos,
        text_protos=text_protos,
        extra={"finals": np.stack([first, second], axis=1)},
    )


def table_index(tokens) -> dict:
    index = {UNK: 0}
    index.update({t: i + 1 for i, t in enumerate(tokens)})
    return index


def write_corpus(corpus: SynthCorpus, out_dir) -> str:
    """Write manifest, audio tables, latents and text embeddings under ``out_dir``."""
    spec = corpus.spec
    out = os.fspath(out_dir)
    for sub in ("audio", "latents", "text"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)
    index = table_index(corpus.tokens)
    audio = {}
    for dialect, matrix in corpus.tables.items():
        idx_rel, mat_rel = f"audio/{dialect}.index.json", f"audio/{dialect}.pft"
        _write_json(os.path.join(out, idx_rel), index)
        write_tensor(os.path.join(out, mat_rel), matrix)
        audio[dialect] = {"dim": spec.feature_dim, "index": idx_rel, "matrix": mat_rel}
    ids = [r["id"] for r in corpus.records]
    for rid, lat in zip(ids, corpus.latents):
        write_tensor(os.path.join(out, "latents", f"{rid}.pft"), lat)
    write_tensor(os.path.join(out, "text", "text.pft"), corpus.text)
    write_tensor(os.path.join(out, "text", "text_orig.pft"), corpus.text_orig)
    _write_json(os.path.join(out, "text", "index.json"), ids)
    header = {
        "kind": "header",
        "task": spec.task,
        "num_classes": spec.num_classes,
        "audio": audio,
        "latent_shape": list(spec.latent_shape),
        "latent_dir": "latents",
        "d_text": spec.d_text,
        "text": {"matrix": "text/text.pft", "orig": "text/text_orig.pft", "index": "text/index.json"},
        "synth": _jsonable(spec.to_dict()),
    }
    path = os.path.join(out, "manifest.jsonl")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in corpus.records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
    os.replace(tmp, path)
    return path


def synth_generate(spec: SynthSpec, out_dir) -> SynthCorpus:
    corpus = generate(spec)
    write_corpus(corpus, out_dir)
    return corpus


def summary(corpus: SynthCorpus) -> dict:
    spec = corpus.spec
    counts = {s: sum(r["split"] == s for r in corpus.records) for s in SPLITS}
    return {
        "samples": len(corpus.records),
        "splits": counts,
        "classes": spec.num_classes,
        "task": spec.task,
        "dialects": list(spec.dialects),
        "signal": {"audio": spec.audio_signal, "visual": spec.visual_signal, "text": spec.text_signal},
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _write_json(path, obj) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, ensure_ascii=False)
    os.replace(tmp, path)
