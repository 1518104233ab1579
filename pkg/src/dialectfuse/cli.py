"""Command-line interface.

Exit codes: 0 success, 1 runtime or data failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields, replace

import numpy as np

from . import __version__
from .config import DIALECTS, Ablation, ModelConfig, RunConfig
from .data.checkpoint import load_checkpoint, save_checkpoint
from .data.dataset import load_dataset
from .data.manifest import read_manifest
from .data.pft import read_tensor
from .data.report import assemble_table, format_table, read_report, write_report
from .data.synth import SynthSpec, summary, synth_generate
from .diagnostics import TINY, failing_groups, gradcheck_model
from .errors import ConfigError, DialectFuseError
from .numerics.gradcheck import REL_TOL
from .numerics.tensor import inject_fault
from .training import evaluate_split, model_from_checkpoint, train_stage2, warmup_stage

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
ABLATIONS = ("text", "audio", "vision", "dialect", "translation")


class UsageError(Exception):
    pass


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc


def parse_dialects(text: str) -> tuple:
    parts = tuple(p.strip() for p in text.split("+") if p.strip())
    if not 1 <= len(parts) <= 2:
        raise argparse.ArgumentTypeError(f"expected one dialect or a pair like mandarin+cantonese, got {text!r}")
    for p in parts:
        if p not in DIALECTS:
            raise argparse.ArgumentTypeError(f"unknown dialect {p!r} (choose from {', '.join(DIALECTS)})")
    return parts


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with 'model' and 'plan' sections")
    p.add_argument("--seed", type=int, help="override the plan seed")
    p.add_argument("--ablate", action="append", choices=ABLATIONS, default=[], help="disable a branch (repeatable)")
    p.add_argument("--dialects", type=parse_dialects, help="dialect or pair, e.g. mandarin+cantonese")
    p.add_argument("--full-size", action="store_true", help="full-size model: width 768, 8 heads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dialectfuse", description="Tri-modal poetry classification with dialect fusion.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="write a planted-signal synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--config", help="JSON file of generator fields")
    g.add_argument("--seed", type=int)
    g.add_argument("--audio-signal", type=float)
    g.add_argument("--visual-signal", type=float)
    g.add_argument("--text-signal", type=float)
    g.add_argument("--num-classes", type=int)
    g.add_argument("--task", choices=("single-label", "multi-label"))
    g.add_argument("--n-train", type=int)
    g.add_argument("--n-val", type=int)
    g.add_argument("--n-test", type=int)
    g.add_argument("--feature-dim", type=int)
    g.add_argument("--distortion", type=float)
    g.add_argument("--rhyme-corruption", type=float)
    g.add_argument("--dialects", type=parse_dialects)

    w = sub.add_parser("warmup", help="stage 1: contrastive alignment")
    w.add_argument("--data", required=True, help="corpus directory or manifest")
    w.add_argument("--out", required=True, help="checkpoint directory to write")
    w.add_argument("--steps", type=int, help="override the number of warm-up steps")
    _common(w)

    t = sub.add_parser("train", help="stage 2: supervised training (runs warm-up unless --warm is given)")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="run directory (checkpoint, report, logs)")
    t.add_argument("--warm", help="warm-up checkpoint to start from")
    t.add_argument("--epochs", type=int)
    _common(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", required=True, help="report path (without extension)")
    e.add_argument("--split", default="val", choices=("train", "val", "test"))
    e.add_argument("--grouped", action="store_true", help="add per-region accuracy")

    gc = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    gc.add_argument("--config", help="JSON file with a 'model' section (tiny dims by default)")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--inject-fault", help=argparse.SUPPRESS)

    i = sub.add_parser("inspect", help="describe a PFT1 file, checkpoint or manifest")
    i.add_argument("path")

    tb = sub.add_parser("table", help="assemble reports into a comparison table")
    tb.add_argument("reports", nargs="+")
    tb.add_argument("--label", default="ablation", help="metadata key naming each row")
    return parser


def _geometry_from_data(data) -> dict:
    head = data.manifest.header
    dims = {decl["dim"] for decl in head["audio"].values()}
    geo = {
        "task": head["task"],
        "num_classes": head["num_classes"],
        "latent_shape": tuple(head["latent_shape"]),
        "d_text": head["d_text"],
        "max_len": max(ModelConfig.max_len, max(len(r["chars"]) for r in data.manifest.records)),
    }
    if len(dims) == 1:
        geo["d_a"] = dims.pop()
    return geo


def resolve_run(args, data=None) -> RunConfig:
    """Merge config file, dataset geometry and flags into one RunConfig."""
    raw = _read_json(args.config) if getattr(args, "config", None) else {}
    try:
        run = RunConfig.from_dict(raw)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    model_raw = raw.get("model", {})
    model_kw = {}
    if data is not None:
        model_kw = {k: v for k, v in _geometry_from_data(data).items() if k not in model_raw}
    try:
        if getattr(args, "full_size", False):
            keep = {f.name: getattr(run.model, f.name) for f in fields(ModelConfig)}
            keep.update(model_kw)
            keep.update(d=768, heads=8, layers=3, d_f=256)
            model = ModelConfig(**keep)
        else:
            model = replace(run.model, **model_kw)
        plan_kw = {}
        if getattr(args, "seed", None) is not None:
            plan_kw["seed"] = args.seed
        if getattr(args, "dialects", None):
            plan_kw["dialects"] = args.dialects
        if getattr(args, "ablate", None):
            flags = {f.name: getattr(run.plan.ablation, f.name) for f in fields(Ablation)}
            for name in args.ablate:
                flags[f"use_{name}"] = False
            plan_kw["ablation"] = Ablation(**flags)
        if getattr(args, "epochs", None) is not None:
            plan_kw["epochs"] = args.epochs
        if getattr(args, "steps", None) is not None:
            plan_kw["warmup_steps"] = args.steps
        plan = replace(run.plan, **plan_kw)
    except (ConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    return RunConfig(model, plan)


def _write_lines(path, lines) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def cmd_gen_synth(args) -> int:
    raw = _read_json(args.config) if args.config else {}
    flags = {
        "seed": args.seed,
        "audio_signal": args.audio_signal,
        "visual_signal": args.visual_signal,
        "text_signal": args.text_signal,
        "num_classes": args.num_classes,
        "task": args.task,
        "n_train": args.n_train,
        "n_val": args.n_val,
        "n_test": args.n_test,
        "feature_dim": args.feature_dim,
        "distortion": args.distortion,
        "rhyme_corruption": args.rhyme_corruption,
        "dialects": args.dialects,
    }
    raw.update({k: v for k, v in flags.items() if v is not None})
    unknown = set(raw) - {f.name for f in fields(SynthSpec)}
    if unknown:
        raise UsageError(f"unknown generator fields {sorted(unknown)}")
    try:
        spec = SynthSpec(**raw)
    except (ConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    corpus = synth_generate(spec, args.out)
    info = summary(corpus)
    print(f"wrote {info['samples']} samples to {args.out}")
    print(f"splits: " + ", ".join(f"{k}={v}" for k, v in info["splits"].items()))
    print(f"classes: {info['classes']} ({info['task']})")
    sig = info["signal"]
    print(f"signal strengths: audio={sig['audio']} visual={sig['visual']} text={sig['text']}")
    return EXIT_OK


def cmd_warmup(args) -> int:
    data = load_dataset(args.data)
    run = resolve_run(args, data)
    os.makedirs(args.out, exist_ok=True)
    res = warmup_stage(data, run)
    save_checkpoint(res.checkpoint, args.out)
    _write_lines(os.path.join(args.out, "loss.log"), (f"{i} {v!r}" for i, v in enumerate(res.losses)))
    if res.losses:
        print(f"warm-up: {len(res.losses)} steps, loss {res.losses[0]:.4f} -> {res.losses[-1]:.4f}")
    else:
        print("warm-up: 0 steps, checkpoint equals initialisation")
    return EXIT_OK


def cmd_train(args) -> int:
    data = load_dataset(args.data)
    run = resolve_run(args, data)
    os.makedirs(args.out, exist_ok=True)
    warm_model = None
    warm_losses = []
    if args.warm:
        ckpt = load_checkpoint(args.warm)
        warm_model, _ = model_from_checkpoint(ckpt, run)
    elif run.plan.warmup_steps > 0 and len(run.plan.ablation.enabled()) >= 2:
        warm = warmup_stage(data, run)
        warm_model, warm_losses = warm.model, warm.losses

    def log(row):
        print(f"epoch {row['epoch']:3d}  loss {row['train_loss']:.4f}  val acc {row['val_accuracy']:.4f}", flush=True)

    res = train_stage2(data, run, warm_model, log=log)
    save_checkpoint(res.checkpoint, os.path.join(args.out, "checkpoint"))
    _write_lines(os.path.join(args.out, "warmup_loss.log"), (f"{i} {v!r}" for i, v in enumerate(warm_losses)))
    _write_lines(os.path.join(args.out, "loss.log"), (f"{i} {v!r}" for i, v in enumerate(res.losses)))
    _write_lines(os.path.join(args.out, "history.jsonl"), (json.dumps(r, sort_keys=True) for r in res.history))
    report = res.report
    report.meta["best_epoch"] = res.checkpoint.meta.get("best_epoch", 0)
    write_report(report, os.path.join(args.out, "report"))
    print(f"best epoch {report.meta['best_epoch']}: accuracy {report.accuracy:.4f}  micro-F1 {report.micro_f1:.4f}  macro-F1 {report.macro_f1:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    model, run = model_from_checkpoint(ckpt)
    report = evaluate_split(model, data, run, args.split, grouped=args.grouped)
    write_report(report, args.out)
    print(f"{args.split}: accuracy {report.accuracy:.4f}  micro-F1 {report.micro_f1:.4f}  macro-F1 {report.macro_f1:.4f}  (n={report.num_samples})")
    for tag, acc in sorted(report.group_accuracy.items()):
        print(f"  {tag}: {acc:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = TINY
    if args.config:
        try:
            config = RunConfig.from_dict({"model": _read_json(args.config).get("model", {})}).model
        except ConfigError as exc:
            raise UsageError(str(exc)) from exc
    if args.inject_fault:
        op, _, factor = args.inject_fault.partition(":")
        with inject_fault(op, float(factor) if factor else 1.01):
            groups, _ = gradcheck_model(config, args.seed)
    else:
        groups, _ = gradcheck_model(config, args.seed)
    for name, err in groups.items():
        status = "ok" if err <= REL_TOL else "FAIL"
        print(f"{name:24s} worst rel err {err:.3e}  {status}")
    bad = failing_groups(groups)
    if bad:
        print(f"gradient check failed for: {', '.join(bad)}", file=sys.stderr)
        return EXIT_FAIL
    print(f"all {len(groups)} groups within {REL_TOL:g}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = args.path
    if os.path.isdir(path):
        if os.path.isfile(os.path.join(path, "meta.json")):
            ckpt = load_checkpoint(path)
            total = sum(int(np.asarray(a).size) for a in ckpt.params.values())
            print(f"checkpoint: stage={ckpt.meta.get('stage')} step={ckpt.meta.get('step')} seed={ckpt.meta.get('seed')}")
            for name, arr in ckpt.params.items():
                print(f"  {name:40s} {tuple(arr.shape)}")
            print(f"{len(ckpt.params)} tensors, {total} parameters")
            return EXIT_OK
        if os.path.isfile(os.path.join(path, "manifest.jsonl")):
            path = os.path.join(path, "manifest.jsonl")
        else:
            raise DialectFuseError(f"{path}: not a checkpoint or corpus directory")
    if path.endswith(".jsonl"):
        man = read_manifest(path)
        head = man.header
        splits = {}
        for r in man.records:
            splits[r.get("split", "train")] = splits.get(r.get("split", "train"), 0) + 1
        print(f"manifest: {len(man.records)} samples, task={head['task']}, classes={head['num_classes']}")
        print("  splits: " + ", ".join(f"{k}={v}" for k, v in sorted(splits.items())))
        for dialect, decl in sorted(head["audio"].items()):
            print(f"  audio {dialect}: d_a={decl['dim']}")
        print(f"  latent shape: {tuple(head['latent_shape'])}  d_text: {head['d_text']}")
        return EXIT_OK
    if path.endswith(".json") or path.endswith(".txt"):
        rep = read_report(path)
        print(f"report: accuracy={rep.accuracy:.4f} micro_f1={rep.micro_f1:.4f} macro_f1={rep.macro_f1:.4f} n={rep.num_samples}")
        return EXIT_OK
    arr = read_tensor(path)
    print(f"PFT1 float64 dims={tuple(arr.shape)}")
    if arr.size:
        print(f"  min={arr.min():.6g} mean={arr.mean():.6g} max={arr.max():.6g}")
    return EXIT_OK


def cmd_table(args) -> int:
    reports = [read_report(p) for p in args.reports]
    print(format_table(assemble_table(reports, args.label)), end="")
    return EXIT_OK


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "warmup": cmd_warmup,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "inspect": cmd_inspect,
    "table": cmd_table,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DialectFuseError, ValueError, OSError, FloatingPointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
