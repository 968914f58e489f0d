"""Linear algebra and Riemannian geometry on symmetric and SPD matrices.

Matrices are plain float64 ndarrays. Every function accepts a single
``(n, n)`` matrix and most also accept stacks shaped ``(..., n, n)``; the
operations are applied independently along the leading axes.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyInput, NonConvergence, NotSpd, Overflow

# exp(x) overflows float64 above this
_EXP_LIMIT = float(np.log(np.finfo(np.float64).max))
# relative eigen-gap under which the divided difference of log is Taylor-expanded
_TAYLOR_GAP = 1e-6


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray  # (..., n), descending
    eigenvectors: np.ndarray  # (..., n, n), columns


def sym(S) -> np.ndarray:
    """Symmetrize ``(S + S^T) / 2``."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim < 2 or S.shape[-1] != S.shape[-2]:
        raise DimensionMismatch(f"expected square matrices, got shape {S.shape}")
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def spd_threshold(eigenvalues: np.ndarray) -> np.ndarray:
    """Smallest admissible eigenvalue: 1e-10 times the spectral radius, floored at 1."""
    return 1e-10 * np.maximum(eigenvalues.max(axis=-1), 1.0)


def _fix_signs(U: np.ndarray) -> np.ndarray:
    # first component with |u| > 1e-12 of every eigenvector is made positive
    mask = np.abs(U) > 1e-12
    first = np.argmax(mask, axis=-2)  # (..., n)
    pivot = np.take_along_axis(U, first[..., None, :], axis=-2)
    signs = np.where(pivot < 0, -1.0, 1.0)
    return U * signs


def eig_sym(S) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues in descending order.

    Eigenvector signs are fixed so that the first non-negligible component
    of each column is positive, which makes the output deterministic.
    """
    S = sym(S)
    if not np.all(np.isfinite(S)):
        raise ValueError("matrix has non-finite entries")
    try:
        w, U = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        raise NonConvergence(f"symmetric eigensolver failed: {exc}") from exc
    # stable descending order keeps tied eigenvectors in the solver's order
    order = np.argsort(-w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    U = np.take_along_axis(U, order[..., None, :], axis=-1)
    return EigenDecomposition(w, _fix_signs(U))


def _reconstruct(U: np.ndarray, values: np.ndarray) -> np.ndarray:
    return sym((U * values[..., None, :]) @ np.swapaxes(U, -1, -2))


def _spd_eig(X) -> EigenDecomposition:
    dec = eig_sym(X)
    bad = dec.eigenvalues[..., -1] <= spd_threshold(dec.eigenvalues)
    if np.any(bad):
        raise NotSpd(
            f"matrix is not SPD (min eigenvalue {dec.eigenvalues[..., -1].min():.3e})"
        )
    return dec


def check_spd(X) -> np.ndarray:
    """Return ``X`` symmetrized, raising :class:`NotSpd` if it fails validation."""
    _spd_eig(X)
    return sym(X)


def is_spd(X) -> bool:
    try:
        _spd_eig(X)
    except (NotSpd, ValueError):
        return False
    return True


def matrix_log(X) -> np.ndarray:
    w, U = _spd_eig(X)
    return _reconstruct(U, np.log(w))


def matrix_exp(S) -> np.ndarray:
    w, U = eig_sym(S)
    if np.any(w > _EXP_LIMIT):
        raise Overflow(f"eigenvalue {w.max():.3e} exceeds the exponentiation range")
    return _reconstruct(U, np.exp(w))


def matrix_power(X, a: float) -> np.ndarray:
    w, U = _spd_eig(X)
    return _reconstruct(U, w ** a)


def _same_dim(*mats):
    n = mats[0].shape[-1]
    for M in mats[1:]:
        if M.shape[-1] != n:
            raise DimensionMismatch(f"dimension {M.shape[-1]} != {n}")


def _congruence(B: np.ndarray, X: np.ndarray) -> np.ndarray:
    return sym(B @ X @ B)


def matrix_log_at(X, P) -> np.ndarray:
    """Logarithmic map with center of projection ``P``."""
    X = np.asarray(X, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    _same_dim(X, P)
    w, U = _spd_eig(P)
    P_half = _reconstruct(U, np.sqrt(w))
    P_ihalf = _reconstruct(U, 1.0 / np.sqrt(w))
    return _congruence(P_half, matrix_log(_congruence(P_ihalf, X)))


def matrix_exp_at(S, P) -> np.ndarray:
    """Inverse of :func:`matrix_log_at`."""
    S = np.asarray(S, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    _same_dim(S, P)
    w, U = _spd_eig(P)
    P_half = _reconstruct(U, np.sqrt(w))
    P_ihalf = _reconstruct(U, 1.0 / np.sqrt(w))
    return _congruence(P_half, matrix_exp(_congruence(P_ihalf, S)))


def le_distance(X, Y, P=None) -> float:
    """LogEuclidean distance between ``X`` and ``Y`` (Frobenius norm) at center ``P``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _same_dim(X, Y)
    if P is None:
        return float(np.linalg.norm(matrix_log(X) - matrix_log(Y)))
    P = np.asarray(P, dtype=np.float64)
    _same_dim(X, P)
    P_ihalf = matrix_power(P, -0.5)
    diff = matrix_log(_congruence(P_ihalf, X)) - matrix_log(_congruence(P_ihalf, Y))
    return float(np.linalg.norm(diff))


def _stack(Xs, what="matrices") -> np.ndarray:
    if isinstance(Xs, np.ndarray):
        arr = np.asarray(Xs, dtype=np.float64)
    else:
        Xs = list(Xs)
        if not Xs:
            raise EmptyInput(f"no {what} given")
        shapes = {np.shape(X) for X in Xs}
        if len(shapes) != 1:
            raise DimensionMismatch(f"{what} have differing shapes {sorted(shapes)}")
        arr = np.stack([np.asarray(X, dtype=np.float64) for X in Xs])
    if arr.shape[0] == 0:
        raise EmptyInput(f"no {what} given")
    return arr


def le_weighted_sum(Xs, ws: Sequence[float], P=None) -> np.ndarray:
    """Closed-form LogEuclidean weighted sum ``exp_P(sum_i w_i log_P(X_i))``."""
    Xs = _stack(Xs)
    ws = np.asarray(ws, dtype=np.float64)
    if ws.shape != (Xs.shape[0],):
        raise DimensionMismatch(f"{ws.shape[0] if ws.ndim else 0} weights for {Xs.shape[0]} matrices")
    if P is None:
        return matrix_exp(np.tensordot(ws, matrix_log(Xs), axes=1))
    P = np.asarray(P, dtype=np.float64)
    _same_dim(Xs, P)
    return matrix_exp_at(np.tensordot(ws, matrix_log_at(Xs, P), axes=1), P)


def euclidean_mean(As) -> np.ndarray:
    return _stack(As).mean(axis=0)


def karcher_residual(Xs, G) -> float:
    """``||sum_i log(G^-1/2 X_i G^-1/2)||_F``; zero exactly at the affine-invariant mean."""
    Xs = _stack(Xs)
    G_ihalf = matrix_power(G, -0.5)
    return float(np.linalg.norm(matrix_log(_congruence(G_ihalf, Xs)).sum(axis=0)))


def affine_invariant_mean(Xs, max_iter: int = 60, tol: float = 1e-10) -> np.ndarray:
    """Affine-invariant (Karcher) mean by fixed-point iteration.

    Starts from the Euclidean mean and iterates
    ``G <- G^1/2 exp(mean_i log(G^-1/2 X_i G^-1/2)) G^1/2`` until the Karcher
    residual is at most ``tol * N``. Raises :class:`NonConvergence` carrying the
    last residual if that does not happen within ``max_iter`` updates.
    """
    Xs = _stack(Xs)
    N = Xs.shape[0]
    _spd_eig(Xs)
    if N == 1:
        return sym(Xs[0])
    G = sym(Xs.mean(axis=0))
    residual = np.inf
    for it in range(max_iter + 1):
        w, U = _spd_eig(G)
        G_half = _reconstruct(U, np.sqrt(w))
        G_ihalf = _reconstruct(U, 1.0 / np.sqrt(w))
        T = matrix_log(_congruence(G_ihalf, Xs)).mean(axis=0)
        residual = N * float(np.linalg.norm(T))
        if residual <= tol * N:
            return G
        if it == max_iter:
            break
        G = _congruence(G_half, matrix_exp(T))
    raise NonConvergence(
        f"Karcher mean did not converge in {max_iter} iterations (residual {residual:.3e})",
        residual=residual,
    )


def log_divided_differences(w: np.ndarray) -> np.ndarray:
    """Loewner matrix of ``log`` at eigenvalues ``w`` (shape ``(..., n)``).

    Entry ``(i, j)`` is ``(log w_i - log w_j) / (w_i - w_j)``; for nearly equal
    eigenvalues the quotient is replaced by its second-order Taylor expansion
    about the midpoint, and the diagonal is ``1 / w_i``.
    """
    wi = w[..., :, None]
    wj = w[..., None, :]
    gap = wi - wj
    mid = 0.5 * (wi + wj)
    half = 0.5 * gap
    close = np.abs(gap) < _TAYLOR_GAP * np.maximum(wi, wj)
    taylor = 1.0 / mid + half * half / (3.0 * mid ** 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = (np.log(wi) - np.log(wj)) / gap
    return np.where(close, taylor, exact)


def matrix_log_vjp(X, upstream) -> np.ndarray:
    """Cotangent of :func:`matrix_log` at ``X`` applied to ``upstream``."""
    X = np.asarray(X, dtype=np.float64)
    G = sym(upstream)
    _same_dim(X, G)
    w, U = _spd_eig(X)
    Ut = np.swapaxes(U, -1, -2)
    inner = (Ut @ G @ U) * log_divided_differences(w)
    return sym(U @ inner @ Ut)
