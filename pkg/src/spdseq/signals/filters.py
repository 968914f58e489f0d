"""Butterworth bandpass filters as cascades of second-order sections."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from ..errors import InvalidBand

# frequency bands (Hz), each [low, high)
BANDS = (
    ("delta", 0.5, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 12.0),
    ("beta_low", 12.0, 22.0),
    ("beta_high", 22.0, 30.0),
    ("gamma", 30.0, 45.0),
)


def design_bandpass(low: float, high: float, fs: float) -> np.ndarray:
    """Fourth-order Butterworth bandpass, returned as a ``(2, 6)`` SOS array.

    A second-order analog lowpass prototype is moved to the band with the
    usual lowpass-to-bandpass substitution (band edges pre-warped), then
    discretized with the bilinear transform. Each section is
    ``[b0, b1, b2, 1, a1, a2]`` with numerator ``g * (1 - z^-2)``.
    """
    if not 0 < low < high < fs / 2:
        raise InvalidBand(f"need 0 < low < high < fs/2, got ({low}, {high}) at fs={fs}")
    k = 2.0 * fs
    w1 = k * math.tan(math.pi * low / fs)
    w2 = k * math.tan(math.pi * high / fs)
    bw = w2 - w1
    w0sq = w1 * w2

    # prototype poles in the upper half plane are enough: the rest are conjugates
    proto = np.exp(1j * math.pi * 3 / 4)
    disc = np.sqrt((proto * bw) ** 2 - 4 * w0sq + 0j)
    analog = np.array([(proto * bw + disc) / 2, (proto * bw - disc) / 2])
    analog = np.where(analog.imag < 0, analog.conj(), analog)
    zpoles = (k + analog) / (k - analog)

    sos = np.zeros((2, 6))
    for i, p in enumerate(zpoles):
        sos[i] = [1.0, 0.0, -1.0, 1.0, -2.0 * p.real, abs(p) ** 2]

    # unit gain at the digital image of the analog center frequency
    omega0 = 2.0 * math.atan(math.sqrt(w0sq) / k)
    gain = 1.0 / abs(sos_response(sos, np.array([omega0]))[0])
    sos[:, :3] *= math.sqrt(gain)
    return sos


def sos_response(sos: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Complex response of a SOS cascade at angular frequencies ``omega`` (rad/sample)."""
    z1 = np.exp(-1j * np.asarray(omega, dtype=np.float64))
    z2 = z1 * z1
    h = np.ones_like(z1)
    for b0, b1, b2, a0, a1, a2 in sos:
        h = h * (b0 + b1 * z1 + b2 * z2) / (a0 + a1 * z1 + a2 * z2)
    return h


def magnitude_at(sos: np.ndarray, freq_hz, fs: float) -> np.ndarray:
    return np.abs(sos_response(sos, 2.0 * np.pi * np.asarray(freq_hz, dtype=np.float64) / fs))


def apply_filter(sos: np.ndarray, x) -> np.ndarray:
    """Causal forward filtering from a zero initial state, along the last axis."""
    return sps.sosfilt(sos, np.asarray(x, dtype=np.float64), axis=-1)


@dataclass(frozen=True)
class FilterBank:
    """Unfiltered pass-through channel followed by one bandpass channel per band."""

    bands: tuple = tuple((lo, hi) for _, lo, hi in BANDS)
    order: int = 4
    names: tuple = field(default=("raw",) + tuple(name for name, _, _ in BANDS))

    @property
    def n_channels(self) -> int:
        return len(self.bands) + 1

    def design(self, fs: float) -> list:
        return [design_bandpass(lo, hi, fs) for lo, hi in self.bands]

    def apply(self, signals, fs: float) -> np.ndarray:
        """Filter ``(n, T)`` signals into a ``(C, n, T)`` stack, channel 0 unfiltered."""
        signals = np.asarray(signals, dtype=np.float64)
        out = [signals]
        out += [apply_filter(sos, signals) for sos in self.design(fs)]
        return np.stack(out)

    def describe(self) -> dict:
        return {
            "order": self.order,
            "channels": [{"name": "raw", "band": None}]
            + [{"name": nm, "band": [lo, hi]} for nm, (lo, hi) in zip(self.names[1:], self.bands)],
        }
