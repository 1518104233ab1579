"""Evaluation reports: a key-value text file plus a JSON twin, and table assembly."""

from __future__ import annotations

import json
import os
from dataclasses import asdict

from ..errors import FormatError
from ..metrics import EvalReport

REQUIRED = ("accuracy", "micro_f1", "macro_f1", "per_class_f1", "num_samples", "tp", "fp", "fn")
_LISTS = ("per_class_f1", "tp", "fp", "fn")


def _paths(path) -> tuple[str, str]:
    base = os.fspath(path)
    for ext in (".txt", ".json"):
        if base.endswith(ext):
            base = base[: -len(ext)]
    return base + ".txt", base + ".json"


def report_text(report: EvalReport) -> str:
    lines = [
        f"accuracy = {report.accuracy!r}",
        f"micro_f1 = {report.micro_f1!r}",
        f"macro_f1 = {report.macro_f1!r}",
        f"num_samples = {report.num_samples}",
    ]
    for key in _LISTS:
        lines.append(f"{key} = " + " ".join(repr(v) for v in getattr(report, key)))
    for tag, acc in sorted(report.group_accuracy.items()):
        lines.append(f"group.{tag} = {acc!r}")
    for key, value in sorted(report.meta.items()):
        lines.append(f"meta.{key} = {json.dumps(value, sort_keys=True)}")
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, path) -> tuple[str, str]:
    """Write ``<path>.txt`` and ``<path>.json``; returns both paths."""
    txt, js = _paths(path)
    folder = os.path.dirname(txt)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(txt, "w", encoding="utf-8") as fh:
        fh.write(report_text(report))
    with open(js, "w", encoding="utf-8") as fh:
        json.dump(asdict(report), fh, sort_keys=True, indent=1)
        fh.write("\n")
    return txt, js


def _from_fields(fields: dict, source: str) -> EvalReport:
    missing = [k for k in REQUIRED if k not in fields]
    if missing:
        raise FormatError(f"{source}: report lacks required fields {missing}")
    return EvalReport(
        accuracy=float(fields["accuracy"]),
        micro_f1=float(fields["micro_f1"]),
        macro_f1=float(fields["macro_f1"]),
        per_class_f1=[float(v) for v in fields["per_class_f1"]],
        num_samples=int(fields["num_samples"]),
        tp=[int(v) for v in fields["tp"]],
        fp=[int(v) for v in fields["fp"]],
        fn=[int(v) for v in fields["fn"]],
        group_accuracy={k: float(v) for k, v in fields.get("group_accuracy", {}).items()},
        meta=dict(fields.get("meta", {})),
    )


def parse_report_text(text: str, source: str = "<report>") -> EvalReport:
    fields = {"group_accuracy": {}, "meta": {}}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise FormatError(f"{source}:{lineno}: expected 'key = value'")
        if key.startswith("group."):
            fields["group_accuracy"][key[6:]] = float(value)
        elif key.startswith("meta."):
            fields["meta"][key[5:]] = json.loads(value)
        elif key in _LISTS:
            fields[key] = value.split()
        else:
            fields[key] = value
    return _from_fields(fields, source)


def read_report(path) -> EvalReport:
    """Parse a report from its ``.json`` (preferred) or ``.txt`` file."""
    path = os.fspath(path)
    txt, js = _paths(path)
    if path.endswith(".txt") or not os.path.exists(js):
        with open(txt, encoding="utf-8") as fh:
            return parse_report_text(fh.read(), txt)
    with open(js, encoding="utf-8") as fh:
        try:
            fields = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{js}: malformed report ({exc})") from exc
    return _from_fields(fields, js)


def assemble_table(reports, label_key: str = "ablation") -> list[dict]:
    """One row per report, in input order: label, accuracy, micro-F1, macro-F1, samples."""
    rows = []
    for i, rep in enumerate(reports):
        rows.append(
            {
                "run": str(rep.meta.get(label_key, f"run{i}")),
                "accuracy": rep.accuracy,
                "micro_f1": rep.micro_f1,
                "macro_f1": rep.macro_f1,
                "num_samples": rep.num_samples,
            }
        )
    return rows


def format_table(rows) -> str:
    width = max([len("run")] + [len(r["run"]) for r in rows])
    out = [f"{'run':<{width}}  {'acc':>7}  {'mic-f1':>7}  {'mac-f1':>7}  {'n':>5}"]
    for r in rows:
        out.append(
            f"{r['run']:<{width}}  {100 * r['accuracy']:7.2f}  {100 * r['micro_f1']:7.2f}  "
            f"{100 * r['macro_f1']:7.2f}  {r['num_samples']:5d}"
        )
    return "\n".join(out) + "\n"
