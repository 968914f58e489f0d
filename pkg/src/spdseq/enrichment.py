"""Matrix augmentation with signal-wise features and per-recording whitening.

Four whitening strategies are supported:

``DAW``
    direct average whitening: the whitening matrix is the affine-invariant
    mean of the augmented matrices.
``MAW``
    mirrored augmentation whitening: the affine-invariant mean of the
    covariances is augmented by the Euclidean mean of the feature matrices.
``WPA``
    whitening prior to augmentation: covariances are whitened by their
    affine-invariant mean, then augmented.
``GLOBAL_COV``
    as ``WPA`` but the whitening matrix is the Euclidean mean of the
    covariances (the recording's global covariance, used as an ablation).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spd
from .errors import ConfigError, DimensionMismatch, EmptyInput

STRATEGIES = ("DAW", "MAW", "WPA", "GLOBAL_COV")
FEATURE_SOURCES = ("AVG_PSD", "ZEROS")


@dataclass(frozen=True)
class EnrichmentConfig:
    strategy: str = "MAW"
    alpha: float = 1.0
    feature_source: str = "AVG_PSD"
    k: int = 1

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if self.feature_source not in FEATURE_SOURCES:
            raise ConfigError(
                f"unknown feature_source {self.feature_source!r}, expected one of {FEATURE_SOURCES}"
            )
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if self.k < 0:
            raise ConfigError("k must be nonnegative")
        if self.feature_source == "AVG_PSD" and self.k != 1:
            raise ConfigError("AVG_PSD features require k == 1")

    @property
    def augments_first(self) -> bool:
        return self.strategy in ("DAW", "MAW")


def augment(X, A, alpha: float = 1.0) -> np.ndarray:
    """Block matrix ``[[X + a^2 A A^T, a A], [a A^T, I_k]]``.

    Works on single matrices or on stacks ``X: (..., n, n)``, ``A: (..., n, k)``.
    """
    X = np.asarray(X, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == X.ndim - 1:
        A = A[..., None]
    if A.shape[-2] != X.shape[-1]:
        raise DimensionMismatch(f"feature matrix has {A.shape[-2]} rows for {X.shape[-1]} signals")
    if not np.all(np.isfinite(A)):
        raise ValueError("feature matrix has non-finite entries")
    n, k = A.shape[-2], A.shape[-1]
    lead = np.broadcast_shapes(X.shape[:-2], A.shape[:-2])
    aA = alpha * A
    out = np.zeros(lead + (n + k, n + k))
    out[..., :n, :n] = X + aA @ np.swapaxes(aA, -1, -2)
    out[..., :n, n:] = aA
    out[..., n:, :n] = np.swapaxes(aA, -1, -2)
    out[..., n:, n:] = np.eye(k)
    return out


def whiten(Xp, G) -> np.ndarray:
    """Congruence ``G^-1/2 Xp G^-1/2``."""
    Xp = np.asarray(Xp, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if Xp.shape[-1] != G.shape[-1]:
        raise DimensionMismatch(f"dimension {Xp.shape[-1]} != {G.shape[-1]}")
    spd.check_spd(Xp)
    G_ihalf = spd.matrix_power(G, -0.5)
    return spd.sym(G_ihalf @ Xp @ G_ihalf)


def _aligned(Xs, As):
    Xs = np.asarray(Xs, dtype=np.float64)
    As = np.asarray(As, dtype=np.float64)
    if Xs.ndim != 3 or Xs.shape[0] == 0:
        raise EmptyInput("need a non-empty stack of matrices")
    if As.ndim == 2:
        As = As[..., None]
    if As.shape[0] != Xs.shape[0]:
        raise DimensionMismatch(f"{As.shape[0]} feature matrices for {Xs.shape[0]} matrices")
    return Xs, As


def whitening_matrix(Xs, As, cfg: EnrichmentConfig) -> np.ndarray:
    """Whitening matrix of one recording/channel under ``cfg.strategy``.

    Dimension ``n + k`` for DAW/MAW, ``n`` for WPA/GLOBAL_COV.
    """
    Xs, As = _aligned(Xs, As)
    if cfg.strategy == "DAW":
        return spd.affine_invariant_mean(augment(Xs, As, cfg.alpha))
    if cfg.strategy == "MAW":
        return augment(spd.affine_invariant_mean(Xs), spd.euclidean_mean(As), cfg.alpha)
    if cfg.strategy == "WPA":
        return spd.affine_invariant_mean(Xs)
    return spd.euclidean_mean(Xs)


def enrich_recording_channel(Xs, As, cfg: EnrichmentConfig):
    """Augment and whiten every matrix of one recording/channel, keeping order.

    Returns ``(enriched, G)`` where ``enriched`` has shape ``(N, n+k, n+k)``.
    """
    Xs, As = _aligned(Xs, As)
    G = whitening_matrix(Xs, As, cfg)
    if cfg.augments_first:
        return whiten(augment(Xs, As, cfg.alpha), G), G
    return augment(whiten(Xs, G), As, cfg.alpha), G
