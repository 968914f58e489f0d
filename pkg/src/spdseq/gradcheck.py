"""Finite-difference checks of every differentiable primitive and of a small model."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, Tensor, grad_check
from .model import ModelConfig, SequenceClassifier, dropout_rng

TINY = ModelConfig(d_in=15, L=5, t=3, p=6, h=3, ff_dim=28, n_layers_intra=1, n_layers_inter=1, classes=3)


def _param(rng, *shape, name=None) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True, name=name)


def _spd(rng, n, spectrum=None) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = rng.uniform(0.5, 3.0, n) if spectrum is None else np.asarray(spectrum, dtype=np.float64)
    return (Q * w) @ Q.T


def _cases(rng):
    """``name -> (fn, params)`` with ``fn`` a scalar built from one primitive."""
    a, b = _param(rng, 3, 4), _param(rng, 3, 4)
    row = _param(rng, 4)
    m1, m2 = _param(rng, 2, 3, 4), _param(rng, 2, 4, 5)
    W, bias = _param(rng, 4, 6), _param(rng, 6)
    x = _param(rng, 2, 3, 4)
    gain, offset = _param(rng, 4), _param(rng, 4)
    nonzero = Tensor(rng.choice([-1.0, 1.0], (3, 4)) * rng.uniform(0.2, 1.0, (3, 4)), requires_grad=True)
    logits = _param(rng, 5, 3)
    targets = rng.integers(0, 3, 5)
    X = Tensor(_spd(rng, 4), requires_grad=True)
    idx = np.array([2, 0, 2, 1])

    def weighted(t):
        # project onto fixed random weights so every output entry matters
        R = np.random.default_rng(t.size).standard_normal(t.shape)
        return ad.tsum(ad.mul(t, Tensor(R)))

    return {
        "add": (lambda: weighted(ad.add(a, row)), [a, row]),
        "sub": (lambda: weighted(ad.sub(a, b)), [a, b]),
        "mul": (lambda: weighted(ad.mul(a, b)), [a, b]),
        "scale": (lambda: weighted(ad.scale(a, -1.7)), [a]),
        "relu": (lambda: weighted(ad.relu(nonzero)), [nonzero]),
        "square": (lambda: weighted(ad.square(a)), [a]),
        "matmul": (lambda: weighted(ad.matmul(m1, m2)), [m1, m2]),
        "linear": (lambda: weighted(ad.linear(x, W, bias)), [x, W, bias]),
        "sum": (lambda: weighted(ad.tsum(x, axis=1)), [x]),
        "mean": (lambda: weighted(ad.mean(x, axis=2)), [x]),
        "reshape": (lambda: weighted(ad.reshape(x, (6, 4))), [x]),
        "transpose": (lambda: weighted(ad.transpose(x, (2, 0, 1))), [x]),
        "swapaxes": (lambda: weighted(ad.swapaxes(x, 0, 2)), [x]),
        "concat": (lambda: weighted(ad.concat([a, b], axis=1)), [a, b]),
        "slice": (lambda: weighted(ad.slice_axis(x, 1, 3, axis=1)), [x]),
        "index_select": (lambda: weighted(ad.index_select(a, idx)), [a]),
        "softmax": (lambda: weighted(ad.softmax(a)), [a]),
        "log_softmax": (lambda: weighted(ad.log_softmax(a)), [a]),
        "layer_norm": (lambda: weighted(ad.layer_norm(x, gain, offset)), [x, gain, offset]),
        "dropout": (lambda: weighted(ad.dropout(a, 0.3, True, np.random.default_rng(5))), [a]),
        "logm": (lambda: weighted(ad.logm(X)), [X]),
        "cross_entropy": (lambda: ad.cross_entropy_label_smoothing(logits, targets, 0.1), [logits]),
    }


def primitive_checks(seed: int = 0, tolerance: float = 1e-5) -> GradCheckReport:
    """One error per primitive: worst relative error over its inputs."""
    rng = np.random.default_rng(seed)
    errors = {}
    for name, (fn, params) in _cases(rng).items():
        errors[name] = grad_check(fn, params, step=1e-6, tolerance=tolerance).max_error
    return GradCheckReport(errors, tolerance)


def logm_checks(seed: int = 0, n: int = 5, trials: int = 5):
    """Reports for the matrix-log gradient on well-separated and nearly degenerate spectra."""
    rng = np.random.default_rng(seed)
    separated, degenerate = {}, {}
    for i in range(trials):
        spectra = {
            "separated": np.linspace(0.5, 4.0, n),
            "degenerate": np.r_[2.0, 2.0 * (1 + 1e-9 * rng.uniform(0.1, 1.0)), np.linspace(0.5, 4.0, n)[2:]],
        }
        for kind, w in spectra.items():
            X = Tensor(_spd(rng, n, w), requires_grad=True)
            R = rng.standard_normal((n, n))
            rep = grad_check(lambda: ad.tsum(ad.mul(ad.logm(X), Tensor(R))), [X], step=1e-6)
            (separated if kind == "separated" else degenerate)[f"{kind}{i}"] = rep.max_error
    return GradCheckReport(separated, 1e-5), GradCheckReport(degenerate, 1e-4)


def model_check(cfg: ModelConfig = TINY, batch: int = 2, entries: int = 3, seed: int = 0) -> GradCheckReport:
    """End-to-end check of the classifier loss in training mode (fixed dropout masks)."""
    model = SequenceClassifier(cfg)
    rng = np.random.default_rng(seed)
    windows = rng.standard_normal((batch, cfg.L, 210, cfg.d_in))
    targets = rng.integers(0, cfg.classes, batch)

    def loss():
        return model.loss(windows, targets, train=True, rng=dropout_rng(seed, 0))

    return grad_check(loss, model.parameters(), step=1e-6, tolerance=1e-4, max_entries=entries, seed=seed)


def run_all(seed: int = 0) -> dict:
    sep, deg = logm_checks(seed)
    return {
        "primitives": primitive_checks(seed),
        "matrix_log_separated": sep,
        "matrix_log_degenerate": deg,
        "model": model_check(seed=seed),
    }
