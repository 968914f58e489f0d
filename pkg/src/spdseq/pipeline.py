"""End-to-end steps shared by the command line and the acceptance tests."""
from __future__ import annotations

import platform
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .config import RunConfig
from .enrichment import EnrichmentConfig
from .errors import ConfigError
from .harness.data import RecordingTokens, load_recording_tokens
from .harness.metrics import MetricsReport
from .harness.training import evaluate, train
from .signals.cache import TokenCache, cache_write, file_sha256
from .signals.filters import FilterBank
from .signals.grid import S, enrich_recording
from .signals.recording import list_recordings, read_recording

METRICS_FILE = "test_metrics.yaml"


def cache_name(rec_id: str, cfg: EnrichmentConfig) -> str:
    return f"{rec_id}.{cfg.strategy}.{cfg.feature_source}.a{cfg.alpha:g}.tok"


def preprocess_recording(rec_dir, cache_dir, cfg: EnrichmentConfig) -> Path:
    rec = read_recording(rec_dir)
    bank = FilterBank()
    er = enrich_recording(rec, bank, cfg)
    cache = TokenCache(er.n, er.k, er.n + er.k, 0, bank.n_channels, S, cfg.strategy, cfg.alpha,
                       er.tokens.astype(np.float32))
    return cache_write(Path(cache_dir) / cache_name(rec.id, cfg), cache)


def _pool_map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]


def recording_dirs(cfg: RunConfig) -> dict:
    dirs = {p.name: p for p in list_recordings(cfg.path("data_dir"))}
    if not dirs:
        raise ConfigError(f"no recordings under {cfg.path('data_dir')}")
    return dirs


def preprocess(cfg: RunConfig, workers: int = 1) -> dict:
    """Build the token cache of every recording; returns ``id -> cache path``."""
    dirs = recording_dirs(cfg)
    jobs = [(d, cfg.path("cache_dir"), cfg.enrichment) for d in dirs.values()]
    paths = _pool_map(preprocess_recording, jobs, workers)
    return dict(zip(dirs, paths))


def load_corpus(cfg: RunConfig, ids=None) -> dict:
    dirs = recording_dirs(cfg)
    ids = sorted(dirs) if ids is None else ids
    corpus = {}
    for rid in ids:
        if rid not in dirs:
            raise ConfigError(f"unknown recording {rid!r}")
        path = cfg.path("cache_dir") / cache_name(rid, cfg.enrichment)
        if not path.exists():
            raise ConfigError(f"missing cache {path}; run preprocess first")
        corpus[rid] = load_recording_tokens(path, dirs[rid], rid)
    return corpus


def manifest(cfg: RunConfig, command: str, extra: dict | None = None) -> dict:
    dirs = recording_dirs(cfg)
    hashes = {}
    for rid in sorted(dirs):
        path = cfg.path("cache_dir") / cache_name(rid, cfg.enrichment)
        hashes[rid] = file_sha256(path) if path.exists() else None
    out = {
        "command": command,
        "config": cfg.to_dict(),
        "seeds": {"model": cfg.model["seed"], "train": cfg.train.seed, "folds": cfg.folds.get("seed")
                  if isinstance(cfg.folds, dict) else None},
        "cache_sha256": hashes,
        "environment": {"python": platform.python_version(), "numpy": np.__version__},
    }
    out.update(extra or {})
    return out


def write_yaml(path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(data, sort_keys=False))
    return path


def write_report(directory, name: str, report: MetricsReport):
    directory = Path(directory)
    write_yaml(directory / f"{name}_metrics.yaml", report.to_dict())
    (directory / f"{name}_confusion.csv").write_text(report.confusion_csv())


def _run_fold(index: int, fold, cfg: RunConfig, log=None):
    corpus = load_corpus(cfg, list(fold.train) + list(fold.validation) + list(fold.test))
    token_dim = next(iter(corpus.values())).tokens.shape[-1]
    model_cfg = cfg.model_config(token_dim)
    fold_dir = cfg.path("run_dir") / f"fold{index:02d}"
    res = train(fold, corpus, model_cfg, cfg.train, fold_dir, log)
    test = evaluate(res.model, [corpus[r] for r in fold.test], cfg.train.clip_test, cfg.train.eval_batch_size)
    if res.validation is not None:
        write_report(fold_dir, "validation", res.validation)
    write_report(fold_dir, "test", test)
    write_yaml(fold_dir / "history.yaml", {"validation_mf1": [float(v) for v in res.history],
                                           "best_pass": res.best_pass, "seconds": res.seconds})
    return res.validation, test


def run_experiment(cfg: RunConfig, workers: int = 1, folds=None, log=None) -> dict:
    """Train and test every fold; writes checkpoints, metrics and a manifest under ``run_dir``."""
    specs = cfg.fold_specs(sorted(recording_dirs(cfg)))
    chosen = range(len(specs)) if folds is None else folds
    jobs = [(i, specs[i], cfg) for i in chosen]
    if workers <= 1:
        results = [_run_fold(*job, log=log) for job in jobs]
    else:
        results = _pool_map(_run_fold, jobs, workers)
    run_dir = cfg.path("run_dir")
    write_yaml(run_dir / "manifest.yaml", manifest(cfg, "train", {"folds": [specs[i].to_dict() for i in chosen]}))
    return {"validation": [r[0] for r in results], "test": [r[1] for r in results]}


def collect_test_reports(run_dir) -> list[MetricsReport]:
    """Test reports of a run directory (its folds, or the directory itself)."""
    run_dir = Path(run_dir)
    files = sorted(run_dir.glob(f"fold*/{METRICS_FILE}")) or sorted(run_dir.glob(METRICS_FILE))
    return [MetricsReport.from_dict(yaml.safe_load(f.read_text())) for f in files]
