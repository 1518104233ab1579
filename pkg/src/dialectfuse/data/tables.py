"""Per-dialect audio feature tables on disk: a JSON token index plus a PFT1 matrix."""

from __future__ import annotations

import json
import os

from ..audio import AudioFeatureTable
from ..errors import DataError, FormatError
from .pft import read_tensor, write_tensor


def _reject_duplicates(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise DataError(f"duplicate token {key!r} in feature index")
        seen[key] = value
    return seen


def read_index(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            index = json.load(fh, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a JSON token index ({exc})") from exc
    if not isinstance(index, dict):
        raise FormatError(f"{path}: token index must be a JSON object")
    for token, row in index.items():
        if not isinstance(row, int) or isinstance(row, bool):
            raise DataError(f"{path}: token {token!r} has non-integer row {row!r}")
    return index


def load_feature_table(index_path, tensor_path, dialect: str | None = None, expect_dim: int | None = None) -> AudioFeatureTable:
    """Load and validate one dialect's table.

    Raises:
        DataError: duplicate or missing ``<unk>`` token, row out of range, or a
            width that differs from ``expect_dim``.
        FormatError: malformed index or tensor file.
    """
    index = read_index(index_path)
    matrix = read_tensor(tensor_path)
    name = dialect or os.path.basename(os.fspath(tensor_path)).split(".")[0]
    table = AudioFeatureTable(name, matrix, index)
    if expect_dim is not None and table.dim != expect_dim:
        raise DataError(f"{name}: feature width {table.dim} does not match declared {expect_dim}")
    return table


def write_feature_table(table: AudioFeatureTable, index_path, tensor_path) -> None:
    tmp = f"{index_path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(table.index, fh, sort_keys=True, ensure_ascii=False)
    os.replace(tmp, index_path)
    write_tensor(tensor_path, table.matrix)
