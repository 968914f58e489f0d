"""Small reverse-mode automatic differentiation over float64 numpy arrays.

Operations are recorded on the active :class:`Tape` (``with Tape() as tape``)
in execution order, which is a topological order by construction;
:meth:`Tape.backward` walks it in exact reverse. Outside a tape, operations
just compute values, which is what evaluation uses.

Each recorded operation keeps its kind, the tape scope it ran in and, for
some kinds, metadata that :mod:`spdseq.model` uses to audit which operations
touch the tokens.
"""
from __future__ import annotations

import contextlib
import contextvars
import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import spd
from .errors import InvalidEps, NonScalarLoss, ShapeMismatch, StaleTape

_ACTIVE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("active_tape", default=None)
_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "id", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self.id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Op:
    kind: str
    inputs: tuple
    output: Tensor
    backward: Callable | None
    scope: tuple = ()
    meta: dict = field(default_factory=dict)


class Tape:
    def __init__(self):
        self.ops: list[Op] = []
        self.consumed = False
        self._scope: list[str] = []
        self._token = None

    def __enter__(self):
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.reset(self._token)
        return False

    @contextlib.contextmanager
    def scope(self, name: str):
        self._scope.append(name)
        try:
            yield
        finally:
            self._scope.pop()

    def mark(self, label: str, tensor: Tensor | None = None):
        """Insert a no-op marker, used to delimit regions of the tape."""
        self.ops.append(Op("mark", (), tensor, None, tuple(self._scope), {"label": label}))

    def record(self, kind, inputs, output, backward, **meta):
        if self.consumed:
            raise StaleTape("cannot record on a tape that has already been differentiated")
        self.ops.append(Op(kind, inputs, output, backward, tuple(self._scope), meta))

    def backward(self, loss: Tensor):
        if self.consumed:
            raise StaleTape("backward already ran on this tape; run the forward pass again")
        if loss.size != 1:
            raise NonScalarLoss(f"loss must be a scalar, got shape {loss.shape}")
        grads = {loss.id: np.ones_like(loss.data)}
        leaves = {}
        for op in reversed(self.ops):
            if op.backward is None or op.output is None:
                continue
            g = grads.pop(op.output.id, None)
            if g is None:
                continue
            for inp, gi in zip(op.inputs, op.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.id in grads:
                    grads[inp.id] = grads[inp.id] + gi
                else:
                    grads[inp.id] = gi
                leaves.setdefault(inp.id, inp)
        # whatever is left was not produced on this tape: leaves
        for tid, g in grads.items():
            t = leaves.get(tid)
            if t is not None:
                t.grad = g if t.grad is None else t.grad + g
        self.consumed = True
        for op in self.ops:
            op.backward = None

    def kinds(self) -> list[str]:
        return [op.kind for op in self.ops]


def active_tape() -> Tape | None:
    return _ACTIVE.get()


def backward(loss: Tensor, tape: Tape | None = None):
    tape = tape or active_tape()
    if tape is None:
        raise StaleTape("no tape recorded this loss")
    tape.backward(loss)


def _make(data, inputs, kind, backward_fn, **meta) -> Tensor:
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = _ACTIVE.get()
    if tape is not None:
        tape.record(kind, tuple(inputs), out, backward_fn, **meta)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_check(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from exc


# elementwise arithmetic

def add(a, b, kind: str = "add") -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b)
    return _make(a.data + b.data, (a, b), kind,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b)
    return _make(a.data - b.data, (a, b), "sub",
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b)
    return _make(a.data * b.data, (a, b), "mul",
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * c, (a,), "scale", lambda g: (g * c,), factor=c)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), "relu", lambda g: (g * mask,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data ** 2, (a,), "square", lambda g: (2.0 * a.data * g,))


# linear algebra

def matmul(a, b, kind: str = "matmul", **meta) -> Tensor:
    """Batched matrix product with numpy broadcasting of leading axes.

    ``kind`` labels the operation on the tape (e.g. ``linear_map`` for
    token-by-weight products, ``token_combination`` for weights-by-token).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul of {a.shape} and {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    meta.setdefault("left_shape", a.shape)
    meta.setdefault("right_shape", b.shape)
    return _make(out, (a, b), kind, bw, **meta)


def linear(x, W, bias=None, kind: str = "linear_map") -> Tensor:
    """``x @ W (+ bias)``; ``W`` has shape ``(d_in, d_out)``."""
    out = matmul(x, W, kind=kind, d_in=W.shape[0], d_out=W.shape[1])
    if bias is not None:
        out = add(out, bias, kind="bias")
    return out


# reductions and shape manipulation

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), "sum", bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size / max(out.size, 1)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make(out, (a,), "mean", bw, axis=axis)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    return _make(out, (a,), "reshape", lambda g: (g.reshape(a.shape),), shape=tuple(out.shape))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), "transpose", lambda g: (g.transpose(inv),), axes=axes)


def swapaxes(a, i, j) -> Tensor:
    axes = list(range(as_tensor(a).ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def bw(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _make(out, tuple(ts), "concat", bw, axis=axis)


def slice_axis(a, start: int, stop: int, axis: int = 0) -> Tensor:
    a = as_tensor(a)
    axis = axis % a.ndim
    if not 0 <= start < stop <= a.shape[axis]:
        raise ShapeMismatch(f"slice [{start}:{stop}] out of range for axis of length {a.shape[axis]}")
    idx = (slice(None),) * axis + (slice(start, stop),)

    def bw(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return _make(a.data[idx], (a,), "slice", bw, axis=axis, start=start, stop=stop)


def index_select(a, index) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), "index", bw)


# normalization, attention and losses

def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (a,), "softmax", bw)


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _make(out, (a,), "log_softmax", bw)


def layer_norm(x, gain, offset, eps: float = 1e-5) -> Tensor:
    """Token-wise normalization over the last axis with learnable gain and offset."""
    x, gain, offset = as_tensor(x), as_tensor(gain), as_tensor(offset)
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + offset.data

    def bw(g):
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return (gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, offset.shape))

    if gain.shape[-1] != d or offset.shape[-1] != d:
        raise ShapeMismatch("layer norm gain/offset must match the token length")
    return _make(out, (x, gain, offset), "layer_norm", bw)


def dropout(x, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when ``train`` is false or ``rate`` is 0."""
    x = as_tensor(x)
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), "dropout", lambda g: (g * keep,), rate=rate)


def logm(X) -> Tensor:
    """Matrix logarithm of SPD matrices ``(..., n, n)``; gradient via :func:`spd.matrix_log_vjp`."""
    X = as_tensor(X)
    return _make(spd.matrix_log(X.data), (X,), "logm",
                 lambda g: (spd.matrix_log_vjp(X.data, g),))


def cross_entropy_label_smoothing(logits, targets, eps: float = 0.0) -> Tensor:
    """Mean over the batch of ``-sum_c q_c log_softmax(logits)_c``.

    ``q = (1 - eps) onehot(target) + eps / C``. ``logits`` is ``(C,)`` or
    ``(B, C)``; ``targets`` an int or an int array of length ``B``.
    """
    if not 0.0 <= eps < 1.0:
        raise InvalidEps(f"label smoothing must be in [0, 1), got {eps}")
    logits = as_tensor(logits)
    single = logits.ndim == 1
    if single:
        logits = reshape(logits, (1, -1))
    C = logits.shape[-1]
    if C < 2:
        raise ShapeMismatch("need at least two classes")
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if t.shape[0] != logits.shape[0]:
        raise ShapeMismatch(f"{t.shape[0]} targets for {logits.shape[0]} rows")
    q = np.full(logits.shape, eps / C)
    q[np.arange(len(t)), t] += 1.0 - eps
    lsm = log_softmax(logits)
    return scale(tsum(mul(lsm, Tensor(q))), -1.0 / len(t))


# numerical gradient checking

@dataclass
class GradCheckReport:
    errors: dict
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def __str__(self):
        lines = [f"{name}: {err:.3e}" for name, err in self.errors.items()]
        status = "PASS" if self.passed else "FAIL"
        return "\n".join(lines + [f"{status} (max {self.max_error:.3e}, tol {self.tolerance:.1e})"])


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm error scaled by the larger max-norm of the two gradients."""
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / denom)


def grad_check(fn: Callable[[], Tensor], params, step: float = 1e-5, tolerance: float = 1e-5,
               max_entries: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare tape gradients of the scalar ``fn()`` against central differences.

    ``params`` is a mapping name -> Tensor or a list of Tensors. With
    ``max_entries``, only that many randomly chosen entries of each parameter
    are perturbed.
    """
    if not isinstance(params, dict):
        params = {p.name or f"p{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    rng = np.random.default_rng(seed)
    errors = {}
    for name, p in params.items():
        analytic = np.zeros(p.shape) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        numeric = np.zeros(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + step
            hi = float(fn().data)
            flat[i] = old - step
            lo = float(fn().data)
            flat[i] = old
            numeric[j] = (hi - lo) / (2 * step)
        errors[name] = relative_error(analytic.reshape(-1)[idx], numeric)
    return GradCheckReport(errors, tolerance)
