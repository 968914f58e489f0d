"""Training with Adam, validation-MF1 early stopping, evaluation and cross-validation."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..checkpoint import load_checkpoint, save_checkpoint
from ..errors import ConfigError
from ..model import ModelConfig, SequenceClassifier, dropout_rng
from .data import FoldSpec, build_sequences, oversample
from .metrics import MetricsReport, aggregate


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    max_passes: int = 100
    patience: int = 10
    seed: int = 0
    oversample: bool = True
    clip_test: int = 24
    finetune_from: str | None = None
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr must be nonnegative")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be positive")
        if self.max_passes < 0 or self.patience < 1:
            raise ConfigError("max_passes must be >= 0 and patience >= 1")

    def validate_for(self, model_cfg: ModelConfig):
        if self.clip_test < model_cfg.ell:
            raise ConfigError(f"clip_test={self.clip_test} must be >= ell={model_cfg.ell}")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.step_count = 0

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.step_count
        c2 = 1 - b2 ** self.step_count
        for k, p in self.params.items():
            if p.grad is None:
                continue
            self.m[k] = b1 * self.m[k] + (1 - b1) * p.grad
            self.v[k] = b2 * self.v[k] + (1 - b2) * p.grad ** 2
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def predict(model: SequenceClassifier, seqs, batch_size: int = 64) -> np.ndarray:
    preds = []
    for start in range(0, len(seqs), batch_size):
        rows = np.arange(start, min(start + batch_size, len(seqs)))
        logits = model.forward(seqs.windows(rows))
        preds.append(np.argmax(logits.data, axis=-1))
    return np.concatenate(preds) if preds else np.zeros(0, int)


def _report(model, seqs, batch_size) -> MetricsReport:
    return MetricsReport.from_predictions(seqs.labels, predict(model, seqs, batch_size), model.cfg.classes)


@dataclass
class TrainResult:
    model: SequenceClassifier
    validation: MetricsReport | None
    history: list = field(default_factory=list)  # validation MF1, index 0 before any update
    best_pass: int = 0
    checkpoint: Path | None = None
    seconds: float = 0.0


def load_model(path) -> tuple[SequenceClassifier, dict]:
    params, meta = load_checkpoint(path)
    model = SequenceClassifier(ModelConfig.from_dict(meta["model"]))
    model.load_state_dict(params)
    return model, meta


def train(fold: FoldSpec, corpus: dict, model_cfg: ModelConfig, train_cfg: TrainConfig,
          out_dir=None, log=None) -> TrainResult:
    """Fit a model on ``fold.train`` and keep the state with the best validation MF1.

    ``corpus`` maps recording ids to :class:`RecordingTokens`. Training stops
    after ``patience`` passes without a strict validation improvement. The
    selected weights are written to ``out_dir/checkpoint.bin`` when given.
    """
    t0 = time.perf_counter()
    train_cfg.validate_for(model_cfg)
    model = SequenceClassifier(model_cfg)
    if train_cfg.finetune_from:
        params, _ = load_checkpoint(train_cfg.finetune_from)
        model.load_state_dict(params)
    train_set = build_sequences([corpus[r] for r in fold.train], model_cfg.ell, "train")
    val_set = (build_sequences([corpus[r] for r in fold.validation], model_cfg.ell, "validation")
               if fold.validation else None)

    params = model.parameters()
    opt = Adam(params, train_cfg.lr)
    best_state = model.state_dict()
    best_report = _report(model, val_set, train_cfg.eval_batch_size) if val_set else None
    history = [best_report.mf1] if best_report else []
    best_pass, stale, step = 0, 0, 0

    for p in range(1, train_cfg.max_passes + 1):
        if train_cfg.oversample:
            order = oversample(train_set.labels, train_cfg.seed * 100003 + p, model_cfg.classes)
        else:
            order = np.random.default_rng(train_cfg.seed * 100003 + p).permutation(len(train_set))
        for start in range(0, len(order), train_cfg.batch_size):
            rows = order[start:start + train_cfg.batch_size]
            opt.zero_grad()
            with ad.Tape() as tape:
                loss = model.loss(train_set.windows(rows), train_set.labels[rows], train=True,
                                  rng=dropout_rng(train_cfg.seed, step))
            tape.backward(loss)
            opt.step()
            step += 1
        if val_set is None:
            best_state, best_pass = model.state_dict(), p
            continue
        report = _report(model, val_set, train_cfg.eval_batch_size)
        history.append(report.mf1)
        if log:
            log(f"pass {p}: loss {float(loss.data):.4f} validation MF1 {report.mf1:.4f}")
        if report.mf1 > best_report.mf1:
            best_report, best_state, best_pass, stale = report, model.state_dict(), p, 0
        else:
            stale += 1
            if stale >= train_cfg.patience:
                break

    model.load_state_dict(best_state)
    ckpt = None
    if out_dir is not None:
        meta = {
            "model": model_cfg.to_dict(),
            "train": train_cfg.to_dict(),
            "fold": fold.to_dict(),
            "best_pass": best_pass,
            "validation_mf1": best_report.mf1 if best_report else None,
        }
        ckpt = save_checkpoint(Path(out_dir) / "checkpoint.bin", best_state, meta)
    return TrainResult(model, best_report, history, best_pass, ckpt, time.perf_counter() - t0)


def evaluate(model, recordings, clip: int = 24, batch_size: int = 64) -> MetricsReport:
    """Scores of ``model`` (or a checkpoint path) on the clipped test targets of ``recordings``."""
    if not isinstance(model, SequenceClassifier):
        model, _ = load_model(model)
    seqs = build_sequences(list(recordings), model.cfg.ell, "test", clip)
    return _report(model, seqs, batch_size)


@dataclass
class CrossValidation:
    validation: list
    test: list

    @property
    def summary(self) -> dict:
        return aggregate(self.test)


def cross_validate(folds, corpus: dict, model_cfg: ModelConfig, train_cfg: TrainConfig,
                   out_dir=None, log=None) -> CrossValidation:
    folds = list(folds)
    if not folds:
        raise ConfigError("cross-validation needs at least one fold")
    vals, tests = [], []
    for i, fold in enumerate(folds):
        fold_dir = None if out_dir is None else Path(out_dir) / f"fold{i:02d}"
        res = train(fold, corpus, model_cfg, train_cfg, fold_dir, log)
        vals.append(res.validation)
        tests.append(evaluate(res.model, [corpus[r] for r in fold.test], train_cfg.clip_test,
                              train_cfg.eval_batch_size))
    return CrossValidation(vals, tests)
