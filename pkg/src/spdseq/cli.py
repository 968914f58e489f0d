"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import pipeline
from .config import load_config
from .errors import ConfigError, SpdSeqError
from .harness.ablation import ablation_suite
from .harness.metrics import aggregate, format_table
from .harness.training import evaluate, load_model
from .signals.filters import FilterBank
from .signals.grid import enriched_channel_means
from .signals.recording import read_recording, write_recording
from .signals.synthetic import generate_synthetic_dataset


def _proportions(text):
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad proportions {text!r}") from exc


def cmd_synth(args) -> int:
    if args.classes < 2 or args.classes > 5:
        raise ConfigError(f"--classes must be between 2 and 5, got {args.classes}")
    if args.recordings < 1 or args.epochs < 1:
        raise ConfigError("--recordings and --epochs must be positive")
    recs = generate_synthetic_dataset(
        args.classes, args.recordings, args.epochs, args.seed, n_signals=args.n_signals, fs=args.fs,
        proportions=_proportions(args.proportions), separation=args.separation,
    )
    out = Path(args.out)
    for rec in recs:
        write_recording(rec, out / rec.id)
    print(f"wrote {len(recs)} recordings to {out}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = load_config(args.config)
    paths = pipeline.preprocess(cfg, args.workers)
    for rid, path in paths.items():
        print(f"{rid}: {path}")
    pipeline.write_yaml(cfg.path("cache_dir") / "preprocess_manifest.yaml", pipeline.manifest(cfg, "preprocess"))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    t0 = time.perf_counter()
    res = pipeline.run_experiment(cfg, args.workers, args.fold, log=print if args.verbose else None)
    for i, (val, test) in enumerate(zip(res["validation"], res["test"])):
        val_text = "n/a" if val is None else f"{100 * val.mf1:.2f}"
        print(f"fold {i}: validation MF1 {val_text}, test MF1 {100 * test.mf1:.2f}")
    summary = aggregate(res["test"])
    m, s = summary["MF1"]
    print(f"test MF1 {m:.2f} ± {s:.2f} over {len(res['test'])} fold(s) in {time.perf_counter() - t0:.1f} s")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    model, meta = load_model(args.checkpoint)
    ids = args.recordings or meta.get("fold", {}).get("test")
    if not ids:
        raise ConfigError("no recordings to evaluate: pass --recordings")
    corpus = pipeline.load_corpus(cfg, ids)
    report = evaluate(model, [corpus[r] for r in ids], args.clip)
    out = Path(args.out)
    pipeline.write_report(out, "test", report)
    pipeline.write_yaml(out / "manifest.yaml", pipeline.manifest(
        cfg, "eval", {"checkpoint": str(args.checkpoint), "recordings": list(ids), "clip": args.clip}))
    print(f"MF1 {100 * report.mf1:.2f}, accuracy {100 * report.accuracy:.2f} on {int(report.confusion.sum())} epochs")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    t0 = time.perf_counter()
    reports = run_all(args.seed)
    ok = True
    for name, rep in reports.items():
        status = "PASS" if rep.passed else "FAIL"
        ok &= rep.passed
        print(f"{status} {name}: max relative error {rep.max_error:.3e} (tol {rep.tolerance:.0e})")
        if args.verbose or not rep.passed:
            print(rep)
    print(f"{time.perf_counter() - t0:.1f} s")
    return 0 if ok else 1


def cmd_report(args) -> int:
    rows = {}
    for d in args.aggregate:
        reports = pipeline.collect_test_reports(d)
        if not reports:
            print(f"warning: no test metrics under {d}", file=sys.stderr)
            continue
        rows[Path(d).name] = aggregate(reports)
    if not rows:
        raise ConfigError("no run directories with test metrics")
    table = format_table(rows)
    print(table)
    if args.out:
        Path(args.out).write_text(table + "\n")
    return 0


def cmd_ablations(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, variant in ablation_suite(cfg).items():
        (out / f"{name}.yaml").write_text(variant.to_yaml())
        print(out / f"{name}.yaml")
    return 0


def cmd_heatmap(args) -> int:
    cfg = load_config(args.config)
    dirs = pipeline.recording_dirs(cfg)
    if args.recording not in dirs:
        raise ConfigError(f"unknown recording {args.recording!r}")
    bank = FilterBank()
    means = enriched_channel_means(read_recording(dirs[args.recording]), bank, cfg.enrichment)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for channel, M in zip(bank.describe()["channels"], means):
        path = out / f"{args.recording}_{channel['name']}.csv"
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(np.round(M, 12).tolist())
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spdseq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labelled corpus")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--recordings", type=int, default=6)
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-signals", type=int, default=4)
    p.add_argument("--fs", type=int, default=128)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--proportions", help="comma-separated class proportions")
    p.add_argument("--out", default="data")
    p.set_defaults(func=cmd_synth)

    def with_config(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--workers", type=int, default=1)
        p.set_defaults(func=func)
        return p

    with_config("preprocess", cmd_preprocess, "build token caches")
    p = with_config("train", cmd_train, "train and test every fold")
    p.add_argument("--fold", type=int, action="append", help="only this fold (repeatable)")
    p.add_argument("--verbose", action="store_true")
    p = with_config("eval", cmd_eval, "score a checkpoint on clipped test targets")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--recordings", nargs="+")
    p.add_argument("--clip", type=int, default=24)
    p.add_argument("--out", default="eval")
    p = with_config("ablations", cmd_ablations, "write the ablation run configurations")
    p.add_argument("--out", default="ablations")
    p = with_config("heatmap", cmd_heatmap, "export per-channel mean enriched matrices as CSV")
    p.add_argument("--recording", required=True)
    p.add_argument("--out", default="heatmaps")

    p = sub.add_parser("gradcheck", help="finite-difference checks of all gradients")
    p.add_argument("--tiny", action="store_true", help="use the small model (the only size supported)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="mean ± std table over run directories")
    p.add_argument("--aggregate", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SpdSeqError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
