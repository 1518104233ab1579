"""Checkpoint directories.

Layout::

    <dir>/meta.json              config, plan, seed, step, stage, parameter order
    <dir>/params/<name>.pft      one PFT1 file per parameter
    <dir>/optim/state.json       Adam hyperparameters and step (optional)
    <dir>/optim/m/<name>.pft     first moments
    <dir>/optim/v/<name>.pft     second moments

Nothing time-dependent is written, so equal inputs give byte-identical directories.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, FormatError
from .pft import read_tensor, write_tensor

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: dict
    meta: dict = field(default_factory=dict)
    optim: dict | None = None  # {"hyper": {...}, "m": {name: arr}, "v": {name: arr}}


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def save_checkpoint(ckpt: Checkpoint, out_dir) -> str:
    out = os.fspath(out_dir)
    for sub in ("params", "optim"):
        path = os.path.join(out, sub)
        if os.path.isdir(path):
            shutil.rmtree(path)
    os.makedirs(os.path.join(out, "params"), exist_ok=True)
    names = list(ckpt.params)
    for name in names:
        write_tensor(os.path.join(out, "params", f"{name}.pft"), np.asarray(ckpt.params[name]))
    meta = dict(ckpt.meta)
    meta["format_version"] = FORMAT_VERSION
    meta["params"] = names
    if ckpt.optim is not None:
        for key in ("m", "v"):
            os.makedirs(os.path.join(out, "optim", key), exist_ok=True)
            for name, arr in ckpt.optim[key].items():
                write_tensor(os.path.join(out, "optim", key, f"{name}.pft"), arr)
        _write_json(os.path.join(out, "optim", "state.json"), ckpt.optim["hyper"])
    _write_json(os.path.join(out, "meta.json"), meta)
    return out


def load_checkpoint(path) -> Checkpoint:
    path = os.fspath(path)
    meta_path = os.path.join(path, "meta.json")
    if not os.path.isfile(meta_path):
        raise DataError(f"no checkpoint at {path} (meta.json missing)")
    try:
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{meta_path}: malformed metadata ({exc})") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{meta_path}: unsupported checkpoint version {meta.get('format_version')!r}")
    names = meta.get("params")
    if not isinstance(names, list):
        raise FormatError(f"{meta_path}: parameter list missing")
    on_disk = {f[: -len(".pft")] for f in os.listdir(os.path.join(path, "params")) if f.endswith(".pft")}
    if on_disk != set(names):
        raise DataError(f"{path}: parameter files {sorted(on_disk ^ set(names))[:5]} disagree with metadata")
    params = {n: read_tensor(os.path.join(path, "params", f"{n}.pft")) for n in names}
    optim = None
    state_path = os.path.join(path, "optim", "state.json")
    if os.path.isfile(state_path):
        with open(state_path, encoding="utf-8") as fh:
            hyper = json.load(fh)
        optim = {"hyper": hyper, "m": {}, "v": {}}
        for key in ("m", "v"):
            folder = os.path.join(path, "optim", key)
            for n in names:
                f = os.path.join(folder, f"{n}.pft")
                if os.path.isfile(f):
                    optim[key][n] = read_tensor(f)
    meta = {k: v for k, v in meta.items() if k not in ("format_version", "params")}
    return Checkpoint(params, meta, optim)
