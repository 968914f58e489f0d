"""Sequence windows over tokenized recordings, folds and class rebalancing."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, MissingClass, RecordingTooShort
from ..signals.cache import cache_read
from ..signals.recording import read_labels

SPLITS = ("train", "validation", "test")


def target_indices(n_epochs: int, ell: int, split: str = "train", clip_test: int = 24) -> np.ndarray:
    """Central-epoch indices usable as targets.

    Every target needs ``ell`` epochs of context on both sides. Test targets
    are further restricted to ``clip_test .. E-1-clip_test`` so that models
    with different context sizes classify the same epochs.
    """
    L = 2 * ell + 1
    if n_epochs < L:
        raise RecordingTooShort(f"{n_epochs} epochs is shorter than the window length {L}")
    margin = ell
    if split == "test":
        if clip_test < ell:
            raise ConfigError(f"clip_test={clip_test} is smaller than the context size {ell}")
        margin = clip_test
    elif split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    return np.arange(margin, n_epochs - margin)


@dataclass
class RecordingTokens:
    id: str
    tokens: np.ndarray  # (E, 210, d)
    labels: np.ndarray  # (E,)


@dataclass
class SequenceSet:
    """Windows ``(recording, center)`` over a group of recordings."""

    recordings: list
    ell: int
    items: np.ndarray  # (N, 2) int: recording position, central epoch
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def windows(self, rows) -> np.ndarray:
        out = []
        for r, c in self.items[rows]:
            out.append(self.recordings[r].tokens[c - self.ell:c + self.ell + 1])
        return np.stack(out).astype(np.float64)


def build_sequences(recordings, ell: int, split: str = "train", clip_test: int = 24) -> SequenceSet:
    items, labels = [], []
    for r, rec in enumerate(recordings):
        idx = target_indices(len(rec.labels), ell, split, clip_test)
        items.append(np.stack([np.full(len(idx), r), idx], axis=1))
        labels.append(rec.labels[idx])
    items = np.concatenate(items) if items else np.zeros((0, 2), int)
    labels = np.concatenate(labels) if labels else np.zeros(0, int)
    return SequenceSet(list(recordings), ell, items.astype(np.int64), labels.astype(np.int64))


def oversample(labels, seed: int, n_classes: int | None = None) -> np.ndarray:
    """Indices into ``labels`` where every class appears as often as the largest one.

    Minority classes are topped up by drawing extra copies without
    replacement (cycling through the class when more than one extra copy per
    item is needed); the result is shuffled. Deterministic under ``seed``.
    """
    labels = np.asarray(labels)
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    rng = np.random.default_rng(seed)
    groups = [np.flatnonzero(labels == c) for c in range(n_classes)]
    missing = [c for c, g in enumerate(groups) if len(g) == 0]
    if missing:
        raise MissingClass(f"classes {missing} have no examples")
    target = max(len(g) for g in groups)
    out = []
    for g in groups:
        reps, extra = divmod(target, len(g))
        out.append(np.tile(g, reps))
        out.append(rng.choice(g, extra, replace=False))
    return rng.permutation(np.concatenate(out))


@dataclass(frozen=True)
class FoldSpec:
    train: tuple
    validation: tuple
    test: tuple

    def __post_init__(self):
        for name in ("train", "validation", "test"):
            object.__setattr__(self, name, tuple(str(r) for r in getattr(self, name)))
        if not self.test:
            raise ConfigError("a fold needs at least one test recording")
        sets = [set(self.train), set(self.validation), set(self.test)]
        if (sets[0] & sets[1]) or (sets[0] & sets[2]) or (sets[1] & sets[2]):
            raise ConfigError("train/validation/test recordings must be disjoint")

    def to_dict(self) -> dict:
        return {"train": list(self.train), "validation": list(self.validation), "test": list(self.test)}


def make_folds(ids, n_validation: int = 1, n_test: int = 1, n_folds: int | None = None,
               seed: int = 0) -> list[FoldSpec]:
    """Rotating folds whose test sets partition the (shuffled) recordings."""
    ids = [str(i) for i in np.random.default_rng(seed).permutation(sorted(ids))]
    if len(ids) < n_validation + n_test + 1:
        raise ConfigError("not enough recordings for the requested fold sizes")
    max_folds = len(ids) // n_test
    n_folds = max_folds if n_folds is None else min(n_folds, max_folds)
    folds = []
    for f in range(n_folds):
        rot = ids[f * n_test:] + ids[:f * n_test]
        folds.append(FoldSpec(rot[n_test + n_validation:], rot[n_test:n_test + n_validation], rot[:n_test]))
    return folds


def load_recording_tokens(cache_path, recording_dir, rec_id: str | None = None) -> RecordingTokens:
    cache = cache_read(cache_path)
    labels = read_labels(recording_dir)
    if len(labels) != cache.epochs:
        raise ConfigError(f"{cache_path}: {cache.epochs} cached epochs but {len(labels)} labels")
    return RecordingTokens(rec_id or Path(recording_dir).name, cache.tokens.astype(np.float64), labels)
