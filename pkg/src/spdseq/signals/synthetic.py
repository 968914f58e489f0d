"""Seeded synthetic multichannel recordings with class-dependent covariance.

Each class owns a mixing matrix and a per-source band-power profile. An
epoch of class ``c`` is made of independent sources shaped in the frequency
domain by the class profile (with a small per-epoch jitter), mixed by the
class mixing matrix and then by a recording-specific near-identity matrix
that plays the role of inter-subject variability.
"""
from __future__ import annotations

import numpy as np

from .. import spd
from .features import segment_covariance, zscore
from .filters import BANDS
from .recording import EPOCH_SECONDS, Recording


def exact_counts(total: int, proportions) -> np.ndarray:
    """Split ``total`` into integer counts following ``proportions`` (largest remainder)."""
    p = np.asarray(proportions, dtype=np.float64)
    p = p / p.sum()
    raw = p * total
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _label_sequence(counts, rng, min_run=2, max_run=8) -> np.ndarray:
    runs = []
    for label, count in enumerate(counts):
        left = int(count)
        while left > 0:
            size = min(left, int(rng.integers(min_run, max_run + 1)))
            runs.append((label, size))
            left -= size
    order = rng.permutation(len(runs))
    return np.concatenate([np.full(runs[i][1], runs[i][0]) for i in order]).astype(np.int64)


def _band_amplitudes(fs: int, n_samples: int, weights: np.ndarray, floor: float) -> np.ndarray:
    # weights: (..., n, 6) band powers -> (..., n, bins) amplitude spectrum
    freqs = np.fft.rfftfreq(n_samples, 1.0 / fs)
    amp = np.full(weights.shape[:-1] + (len(freqs),), floor)
    for b, (_, lo, hi) in enumerate(BANDS):
        sel = (freqs >= lo) & (freqs < hi)
        amp[..., sel] = np.sqrt(weights[..., b : b + 1])
    return amp


class ClassModel:
    def __init__(self, n_classes: int, n_signals: int, rng, separation: float):
        self.mixing = np.stack(
            [np.eye(n_signals) + 0.5 * separation * rng.standard_normal((n_signals, n_signals)) / np.sqrt(n_signals)
             for _ in range(n_classes)]
        )
        self.band_power = np.exp(separation * 0.8 * rng.standard_normal((n_classes, n_signals, len(BANDS))))


def generate_synthetic_dataset(
    n_classes: int,
    n_recordings: int,
    epochs_per_recording: int,
    seed: int,
    n_signals: int = 4,
    fs: int = 128,
    proportions=None,
    separation: float = 1.0,
    subject_variability: float = 0.15,
    epoch_jitter: float = 0.15,
    noise_floor: float = 0.1,
) -> list[Recording]:
    """Generate ``n_recordings`` recordings, deterministic under ``seed``."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if n_recordings < 1:
        raise ValueError("need at least one recording")
    if proportions is None:
        proportions = np.ones(n_classes)
    if len(proportions) != n_classes:
        raise ValueError("one proportion per class is required")
    root = np.random.SeedSequence(seed)
    class_seq, *rec_seqs = root.spawn(n_recordings + 1)
    model = ClassModel(n_classes, n_signals, np.random.default_rng(class_seq), separation)
    counts = exact_counts(epochs_per_recording, proportions)
    width = EPOCH_SECONDS * fs

    recordings = []
    for r, rs in enumerate(rec_seqs):
        rng = np.random.default_rng(rs)
        labels = _label_sequence(counts, rng)
        subject = np.eye(n_signals) + subject_variability * rng.standard_normal((n_signals, n_signals))
        subject *= np.exp(subject_variability * rng.standard_normal(n_signals))[:, None]
        jitter = np.exp(epoch_jitter * rng.standard_normal((len(labels), n_signals, len(BANDS))))
        amp = _band_amplitudes(fs, width, model.band_power[labels] * jitter, noise_floor)
        white = rng.standard_normal((len(labels), n_signals, width))
        sources = np.fft.irfft(np.fft.rfft(white, axis=-1) * amp, n=width, axis=-1)
        mixed = np.einsum("ij,ejk,ekt->eit", subject, model.mixing[labels], sources)
        signals = np.moveaxis(mixed, 0, 1).reshape(n_signals, -1)
        recordings.append(Recording(f"rec{r:03d}", fs, signals, labels))
    return recordings


def centroid_accuracy(recordings) -> float:
    """Leave-one-recording-out LogEuclidean nearest-centroid accuracy.

    One-second covariances of the standardized raw signals are whitened by
    their recording's affine-invariant mean; each held-out matrix is assigned
    to the class whose LogEuclidean centroid is closest.
    """
    logs, labels, owners = [], [], []
    for i, rec in enumerate(recordings):
        x = zscore(rec.signals)
        E = rec.n_epochs
        covs = segment_covariance(
            x.reshape(rec.n_signals, E, -1).transpose(1, 0, 2), rec.fs
        ).reshape(-1, rec.n_signals, rec.n_signals)
        G = spd.affine_invariant_mean(covs)
        Gi = spd.matrix_power(G, -0.5)
        logs.append(spd.matrix_log(Gi @ covs @ Gi))
        labels.append(np.repeat(rec.labels, covs.shape[0] // E))
        owners.append(np.full(covs.shape[0], i))
    logs = np.concatenate(logs)
    labels = np.concatenate(labels)
    owners = np.concatenate(owners)
    classes = np.unique(labels)
    correct = 0
    folds = np.unique(owners) if len(recordings) > 1 else [None]
    for held in folds:
        train = owners != held if held is not None else np.ones_like(owners, bool)
        test = owners == held if held is not None else train
        cents = np.stack([logs[train & (labels == c)].mean(axis=0) for c in classes])
        d = np.linalg.norm(logs[test][:, None] - cents[None], axis=(-2, -1))
        correct += int(np.sum(classes[d.argmin(axis=1)] == labels[test]))
    return correct / len(labels)
