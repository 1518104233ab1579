"""Line-delimited dataset manifests.

The first line is a header record declaring the task kind, class count and
feature geometries; every following line is one sample::

    {"kind": "header", "task": "single-label", "num_classes": 5,
     "audio": {"mandarin": {"dim": 16, "index": "...", "matrix": "..."}},
     "latent_shape": [4, 16, 16], "latent_dir": "latents", "d_text": 32,
     "text": {"matrix": "...", "index": "...", "orig": "..."}}
    {"id": "s00000", "chars": ["c0001", ...], "label": 3, "region": "north", "split": "train"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from ..config import TASKS
from ..errors import DataError, FormatError

SPLITS = ("train", "val", "test")
_REQUIRED_HEADER = ("task", "num_classes", "audio", "latent_shape", "d_text")


@dataclass
class Manifest:
    header: dict
    records: list

    @property
    def task(self) -> str:
        return self.header["task"]

    @property
    def num_classes(self) -> int:
        return self.header["num_classes"]

    def ids(self) -> list:
        return [r["id"] for r in self.records]


def validate_header(header: dict, source: str = "<manifest>") -> dict:
    if header.get("kind") != "header":
        raise FormatError(f"{source}: first record must be the header")
    missing = [k for k in _REQUIRED_HEADER if k not in header]
    if missing:
        raise FormatError(f"{source}: header lacks {missing}")
    if header["task"] not in TASKS:
        raise DataError(f"{source}: unknown task {header['task']!r}")
    m = header["num_classes"]
    if not isinstance(m, int) or m < 2:
        raise DataError(f"{source}: num_classes must be an integer >= 2")
    shape = header["latent_shape"]
    if not (isinstance(shape, list) and len(shape) == 3 and all(isinstance(s, int) and s > 0 for s in shape)):
        raise DataError(f"{source}: latent_shape must be three positive integers, got {shape!r}")
    if not isinstance(header["d_text"], int) or header["d_text"] < 1:
        raise DataError(f"{source}: d_text must be a positive integer")
    if not isinstance(header["audio"], dict) or not header["audio"]:
        raise DataError(f"{source}: header declares no audio tables")
    for dialect, decl in header["audio"].items():
        for key in ("dim", "index", "matrix"):
            if key not in decl:
                raise DataError(f"{source}: audio table {dialect!r} lacks {key!r}")
    return header


def validate_record(rec: dict, task: str, num_classes: int, where: str) -> dict:
    rid = rec.get("id")
    if not isinstance(rid, str) or not rid:
        raise DataError(f"{where}: record id must be a non-empty string")
    chars = rec.get("chars")
    if not isinstance(chars, list) or not chars or not all(isinstance(c, str) for c in chars):
        raise DataError(f"{where}: {rid}: chars must be a non-empty token list")
    if task == "single-label":
        if "labels" in rec or not isinstance(rec.get("label"), int) or isinstance(rec.get("label"), bool):
            raise DataError(f"{where}: {rid}: single-label records need an integer 'label'")
        if not 0 <= rec["label"] < num_classes:
            raise DataError(f"{where}: {rid}: label {rec['label']} outside 0..{num_classes - 1}")
    else:
        labels = rec.get("labels")
        if "label" in rec or not isinstance(labels, list) or not all(isinstance(v, int) for v in labels):
            raise DataError(f"{where}: {rid}: multi-label records need an integer list 'labels'")
        if len(set(labels)) != len(labels) or any(not 0 <= v < num_classes for v in labels):
            raise DataError(f"{where}: {rid}: labels {labels} repeat or fall outside 0..{num_classes - 1}")
    if "region" in rec and not isinstance(rec["region"], str):
        raise DataError(f"{where}: {rid}: region must be a string")
    if rec.get("split", "train") not in SPLITS:
        raise DataError(f"{where}: {rid}: unknown split {rec['split']!r}")
    return rec


def read_manifest(path) -> Manifest:
    """Parse and validate a manifest; ids must be unique."""
    source = str(path)
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{source}: empty manifest")
    try:
        rows = [json.loads(ln) for ln in lines]
    except json.JSONDecodeError as exc:
        raise FormatError(f"{source}: malformed JSON line ({exc})") from exc
    header = validate_header(rows[0], source)
    seen = set()
    records = []
    for lineno, rec in enumerate(rows[1:], start=2):
        rec = validate_record(rec, header["task"], header["num_classes"], f"{source}:{lineno}")
        if rec["id"] in seen:
            raise DataError(f"{source}:{lineno}: duplicate id {rec['id']!r}")
        seen.add(rec["id"])
        records.append(rec)
    if not records:
        raise DataError(f"{source}: manifest has no samples")
    return Manifest(header, records)


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest.header, sort_keys=True) + "\n")
        for rec in manifest.records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
