"""Per-segment statistics: standardization, covariance matrices, average PSD."""
from __future__ import annotations

import numpy as np

from ..errors import DegenerateSegment, DegenerateSignal

JITTER = 1e-6


def zscore(x, axis: int = -1) -> np.ndarray:
    """Zero mean, unit population standard deviation along ``axis``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] < 2:
        raise DegenerateSignal("need at least two samples")
    std = x.std(axis=axis, keepdims=True)
    if np.any(std < 1e-12):
        raise DegenerateSignal("signal has (near) zero standard deviation")
    return (x - x.mean(axis=axis, keepdims=True)) / std


def _segments(x: np.ndarray, fs: int) -> np.ndarray:
    # (..., n, S*fs) -> (..., S, n, fs)
    n_seg = x.shape[-1] // fs
    if n_seg * fs != x.shape[-1]:
        raise ValueError(f"{x.shape[-1]} samples is not a whole number of seconds at fs={fs}")
    seg = x.reshape(x.shape[:-1] + (n_seg, fs))
    return np.moveaxis(seg, -2, -3)


def segment_covariance(epoch_signals, fs: int) -> np.ndarray:
    """Sample covariance of each non-overlapping one-second segment.

    ``epoch_signals`` has shape ``(..., n, S*fs)``; the result has shape
    ``(..., S, n, n)``. A jitter of ``1e-6 * trace / n`` is added to every
    diagonal so rank-deficient segments still come out SPD.
    """
    x = np.asarray(epoch_signals, dtype=np.float64)
    n = x.shape[-2]
    if fs < 2:
        raise ValueError("need at least two samples per segment")
    seg = _segments(x, fs)
    seg = seg - seg.mean(axis=-1, keepdims=True)
    cov = seg @ np.swapaxes(seg, -1, -2) / (fs - 1)
    tr = np.trace(cov, axis1=-2, axis2=-1)
    if np.any(tr < 1e-12):
        raise DegenerateSegment("segment with (near) zero total variance")
    return cov + (JITTER * tr / n)[..., None, None] * np.eye(n)


def periodogram(segment, fs: float) -> np.ndarray:
    """One-sided periodogram along the last axis, in power per Hz."""
    x = np.asarray(segment, dtype=np.float64)
    N = x.shape[-1]
    P = np.abs(np.fft.rfft(x, axis=-1)) ** 2 / (fs * N)
    # every bin except DC (and Nyquist for even N) has a mirrored twin
    stop = -1 if N % 2 == 0 else None
    P[..., 1:stop] *= 2.0
    return P


def avg_psd(segment, fs: float) -> np.ndarray:
    """Average of the one-sided periodogram over its frequency bins."""
    return periodogram(segment, fs).mean(axis=-1)


def segment_avg_psd(epoch_signals, fs: int) -> np.ndarray:
    """Average PSD per signal and segment: ``(..., n, S*fs) -> (..., S, n)``."""
    return avg_psd(_segments(np.asarray(epoch_signals, dtype=np.float64), fs), fs)
