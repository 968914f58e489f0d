"""Bijective tokenization of symmetric matrices and triangular linear maps.

A symmetric ``m x m`` matrix is read row-major along its upper triangle.
Off-diagonal entries are scaled by sqrt(2), so the Euclidean norm of a token
equals the Frobenius norm of its matrix and LogEuclidean distances become
plain vector distances between tokens of matrix logarithms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import spd
from .errors import DimensionMismatch, NotTriangularLength

SQRT2 = math.sqrt(2.0)


def triangular_dim(m: int) -> int:
    if m < 1:
        raise ValueError("matrix dimension must be positive")
    return m * (m + 1) // 2


def triangular_root(d: int) -> int:
    """Inverse of :func:`triangular_dim`; raises if ``d`` is not triangular."""
    m = (math.isqrt(8 * d + 1) - 1) // 2
    if d < 1 or m * (m + 1) // 2 != d:
        raise NotTriangularLength(f"{d} is not a triangular number")
    return m


def is_triangular(d: int) -> bool:
    try:
        triangular_root(d)
    except NotTriangularLength:
        return False
    return True


def nearest_triangular(x: float) -> int:
    """Triangular number closest to ``x`` (ties go to the smaller one)."""
    m = max(1, int(math.floor((math.sqrt(8 * max(x, 1) + 1) - 1) / 2)))
    lo, hi = triangular_dim(m), triangular_dim(m + 1)
    return lo if x - lo <= hi - x else hi


@lru_cache(maxsize=None)
def _layout(m: int):
    rows, cols = np.triu_indices(m)
    scale = np.where(rows == cols, 1.0, SQRT2)
    return rows, cols, scale


def tokenize(S) -> np.ndarray:
    """Token(s) of symmetric matrix/matrices ``S`` with shape ``(..., m, m)``."""
    S = np.asarray(S, dtype=np.float64)
    rows, cols, scale = _layout(S.shape[-1])
    return S[..., rows, cols] * scale


def detokenize(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    m = triangular_root(t.shape[-1])
    rows, cols, scale = _layout(m)
    vals = t / scale
    S = np.zeros(t.shape[:-1] + (m, m))
    S[..., rows, cols] = vals
    S[..., cols, rows] = vals
    return S


def spd_to_token(X) -> np.ndarray:
    return tokenize(spd.matrix_log(X))


def token_to_spd(t) -> np.ndarray:
    return spd.matrix_exp(detokenize(t))


@dataclass
class TriangularMap:
    """Linear map between triangular vector spaces, ``t -> W t + bias``."""

    W: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        triangular_root(self.W.shape[0])
        triangular_root(self.W.shape[1])
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.W.shape[0],):
                raise DimensionMismatch("bias length must match the output length")

    @property
    def source_dim(self) -> int:
        return triangular_root(self.W.shape[1])

    @property
    def target_dim(self) -> int:
        return triangular_root(self.W.shape[0])

    def operator_norm(self, iterations: int = 5000, seed: int = 0) -> float:
        return power_iteration_norm(self.W, iterations, seed)


def apply_map(tmap: TriangularMap, t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.shape[-1] != tmap.W.shape[1]:
        raise DimensionMismatch(f"token length {t.shape[-1]} != map input length {tmap.W.shape[1]}")
    out = t @ tmap.W.T
    if tmap.bias is not None:
        out = out + tmap.bias
    return out


def map_spd(tmap: TriangularMap, X) -> np.ndarray:
    """Induced SPD-to-SPD map ``exp o L o log``."""
    return token_to_spd(apply_map(tmap, spd_to_token(X)))


def power_iteration_norm(W, iterations: int = 5000, seed: int = 0, tol: float = 1e-15) -> float:
    """Spectral norm of ``W`` by power iteration on ``W^T W``.

    Stops once the estimate changes by less than ``tol`` relative, or after
    ``iterations`` steps. The estimate approaches the norm from below.
    """
    W = np.asarray(W, dtype=np.float64)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(W.shape[1])
    v /= np.linalg.norm(v)
    WtW = W.T @ W
    estimate = 0.0
    for _ in range(iterations):
        u = WtW @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        v = u / nu
        previous, estimate = estimate, float(np.sqrt(nu))
        if abs(estimate - previous) <= tol * estimate:
            break
    return float(np.linalg.norm(W @ v))
