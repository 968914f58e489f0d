"""From recordings to per-epoch grids of covariance matrices and tokens."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import spd, tokens
from ..enrichment import EnrichmentConfig, enrich_recording_channel
from .features import segment_avg_psd, segment_covariance, zscore
from .filters import FilterBank
from .recording import EPOCH_SECONDS, Recording

S = EPOCH_SECONDS  # one-second segments per epoch


@dataclass
class EpochGrid:
    epoch: int
    matrices: np.ndarray  # (S, C, n, n)
    features: np.ndarray  # (S, C, n, k)

    @property
    def shape(self):
        return self.matrices.shape[:2]


def filter_recording(rec: Recording, bank: FilterBank) -> np.ndarray:
    """Standardize each signal over the whole recording and filter it: ``(C, n, T)``."""
    return bank.apply(zscore(rec.signals), rec.fs)


def _epoch_view(channels: np.ndarray, fs: int) -> np.ndarray:
    # (C, n, E*S*fs) -> (E, C, n, S*fs)
    C, n, T = channels.shape
    E = T // (S * fs)
    return channels.reshape(C, n, E, S * fs).transpose(2, 0, 1, 3)


def _features(epochs: np.ndarray, fs: int, cfg: EnrichmentConfig) -> np.ndarray:
    # (..., C, n, S*fs) -> (..., S, C, n, k)
    lead = epochs.shape[:-3]
    C, n = epochs.shape[-3:-1]
    if cfg.feature_source == "ZEROS":
        return np.zeros(lead + (S, C, n, cfg.k))
    psd = segment_avg_psd(epochs, fs)  # (..., C, S, n)
    return np.moveaxis(psd, -2, -3)[..., None]


def compute_grids(rec: Recording, bank: FilterBank, cfg: EnrichmentConfig, channels=None):
    """All epochs at once: covariances ``(E, S, C, n, n)`` and features ``(E, S, C, n, k)``."""
    if channels is None:
        channels = filter_recording(rec, bank)
    ep = _epoch_view(channels, rec.fs)
    covs = np.moveaxis(segment_covariance(ep, rec.fs), -3, -4)
    return covs, _features(ep, rec.fs, cfg)


def build_epoch_grid(rec: Recording, index: int, bank: FilterBank, cfg: EnrichmentConfig,
                     channels=None) -> EpochGrid:
    """Grid of one epoch. Filtering runs over the whole recording; pass
    ``channels`` from :func:`filter_recording` to reuse it across epochs."""
    if not 0 <= index < rec.n_epochs:
        raise IndexError(f"epoch {index} out of range for {rec.n_epochs} epochs")
    if channels is None:
        channels = filter_recording(rec, bank)
    w = S * rec.fs
    ep = channels[:, :, index * w:(index + 1) * w]
    covs = np.moveaxis(segment_covariance(ep, rec.fs), -3, -4)
    spd.check_spd(covs)
    return EpochGrid(index, covs, _features(ep, rec.fs, cfg))


@dataclass
class EnrichedRecording:
    id: str
    tokens: np.ndarray  # (E, C*S, d(m)), channel-major within an epoch
    labels: np.ndarray
    whitening: list  # one whitening matrix per channel
    n: int
    k: int


def enrich_recording(rec: Recording, bank: FilterBank, cfg: EnrichmentConfig) -> EnrichedRecording:
    """Whitened, augmented and tokenized matrices for every epoch of ``rec``.

    Whitening matrices are computed per channel over all of the recording's
    one-second matrices. Tokens of an epoch are ordered channel-major: the 30
    tokens of channel 0, then the 30 of channel 1, and so on.
    """
    covs, feats = compute_grids(rec, bank, cfg)
    E, _, C, n, _ = covs.shape
    k = feats.shape[-1]
    m = n + k
    out = np.empty((E, C, S, tokens.triangular_dim(m)))
    whitening = []
    for c in range(C):
        X = covs[:, :, c].reshape(E * S, n, n)
        A = feats[:, :, c].reshape(E * S, n, k)
        M, G = enrich_recording_channel(X, A, cfg)
        whitening.append(G)
        out[:, c] = tokens.spd_to_token(M).reshape(E, S, -1)
    return EnrichedRecording(rec.id, out.reshape(E, C * S, -1), rec.labels.copy(), whitening, n, k)


def enriched_channel_means(rec: Recording, bank: FilterBank, cfg: EnrichmentConfig) -> list:
    """Affine-invariant mean of the enriched matrices of each channel (heatmap export)."""
    er = enrich_recording(rec, bank, cfg)
    E = len(er.labels)
    per_channel = er.tokens.reshape(E, bank.n_channels, S, -1)
    return [spd.affine_invariant_mean(tokens.token_to_spd(per_channel[:, c].reshape(E * S, -1)))
            for c in range(bank.n_channels)]
