"""Transformer over sequences of tokenized SPD matrices.

Input: a batch of ``L``-epoch windows, each epoch a sequence of 210 tokens
(7 channels x 30 one-second matrices, channel-major). A shared triangular
map lifts tokens to length ``d(p)``; an intra-epoch encoder pools each epoch
into ``t`` feature tokens; an inter-epoch encoder compares the ``L * t``
feature tokens and the ``t`` tokens of the central epoch go through the
classification head.
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, SequenceTooLong, ShapeMismatch, TDoesNotDivide210
from .tokens import is_triangular, nearest_triangular, triangular_dim

TOKENS_PER_EPOCH = 210
MHA_KINDS = ("SP", "CLASSIC")


@dataclass(frozen=True)
class ModelConfig:
    d_in: int = 45  # token length of the enriched matrices, d(m)
    L: int = 21
    t: int = 5
    p: int = 26
    h: int = 3
    ff_dim: int = 903
    n_layers_intra: int = 2
    n_layers_inter: int = 2
    dropout: float = 0.1
    label_smoothing: float = 0.1
    classes: int = 5
    mha_kind: str = "SP"
    head_weights: str = "mean"  # or "learned"
    inter_positional: bool = True
    hidden: tuple | None = None  # Linear+ sizes, default (d(p), nearest triangular to d(p)/2)
    seed: int = 0

    def __post_init__(self):
        if self.L < 1 or self.L % 2 == 0:
            raise ConfigError(f"L must be odd, got {self.L}")
        if not is_triangular(self.d_in):
            raise ConfigError(f"d_in={self.d_in} is not a triangular length")
        if self.d_model % self.h:
            raise ConfigError(f"d(p)={self.d_model} is not divisible by h={self.h}")
        if TOKENS_PER_EPOCH % self.t:
            raise TDoesNotDivide210(f"t={self.t} does not divide {TOKENS_PER_EPOCH}")
        if not is_triangular(self.ff_dim):
            raise ConfigError(f"ff_dim={self.ff_dim} is not a triangular length")
        if self.mha_kind not in MHA_KINDS:
            raise ConfigError(f"mha_kind must be one of {MHA_KINDS}")
        if self.head_weights not in ("mean", "learned"):
            raise ConfigError("head_weights must be 'mean' or 'learned'")
        if self.classes < 2:
            raise ConfigError("need at least two classes")

    @property
    def ell(self) -> int:
        return (self.L - 1) // 2

    @property
    def d_model(self) -> int:
        return triangular_dim(self.p)

    @property
    def hidden_sizes(self) -> tuple:
        if self.hidden is not None:
            return tuple(self.hidden)
        return (self.d_model, nearest_triangular(self.d_model / 2))

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["hidden"] is not None:
            d["hidden"] = list(d["hidden"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if d.get("hidden") is not None:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


class Module:
    def parameters(self, prefix: str = "") -> dict:
        out = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + name] = value
            elif isinstance(value, Module):
                out.update(value.parameters(prefix + name + "."))
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.parameters(f"{prefix}{name}.{i}."))
        return out


def _param(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _xavier(rng, d_in, d_out) -> np.ndarray:
    bound = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-bound, bound, (d_in, d_out))


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, kind="linear_map"):
        self.W = _param(_xavier(rng, d_in, d_out))
        self.b = _param(np.zeros(d_out)) if bias else None
        self.kind = kind

    def __call__(self, x):
        return ad.linear(x, self.W, self.b, kind=self.kind)


class TriangularLinear(Linear):
    """Linear map whose input and output lengths are both triangular."""

    def __init__(self, d_in, d_out, rng, bias=True):
        if not (is_triangular(d_in) and is_triangular(d_out)):
            raise ConfigError(f"triangular map needs triangular lengths, got {d_in} -> {d_out}")
        super().__init__(d_in, d_out, rng, bias)


class PositionalEncoding(Module):
    def __init__(self, max_len, d, rng):
        self.table = _param(0.02 * rng.standard_normal((max_len, d)))

    def __call__(self, x):
        n = x.shape[-2]
        if n > self.table.shape[0]:
            raise SequenceTooLong(f"sequence of {n} tokens exceeds the table of {self.table.shape[0]}")
        table = self.table if n == self.table.shape[0] else ad.slice_axis(self.table, 0, n, axis=0)
        return ad.add(x, table, kind="positional")


class LayerNorm(Module):
    def __init__(self, d):
        self.gain = _param(np.ones(d))
        self.offset = _param(np.zeros(d))

    def __call__(self, x):
        return ad.layer_norm(x, self.gain, self.offset)


def _scope(name):
    tape = ad.active_tape()
    return contextlib.nullcontext() if tape is None else tape.scope(name)


class _AttentionMaps(Module):
    """Query/key projections and per-head row-softmax maps, shared by both MHA kinds."""

    def __init__(self, d, h, rng):
        self.h = h
        self.dh = d // h
        self.q = Linear(d, d, rng)
        # a key bias only shifts each score row by a constant, which softmax ignores
        self.k = Linear(d, d, rng, bias=False)

    def heads(self, x):
        # (B, N, d) -> (B, h, N, N)
        B, N, _ = x.shape
        q = ad.transpose(ad.reshape(self.q(x), (B, N, self.h, self.dh)), (0, 2, 1, 3))
        k = ad.transpose(ad.reshape(self.k(x), (B, N, self.h, self.dh)), (0, 2, 3, 1))
        scores = ad.scale(ad.matmul(q, k), 1.0 / math.sqrt(self.dh))
        return ad.softmax(scores)


class SPMHA(Module):
    """Structure-preserving multihead attention.

    Attention maps are those of standard multihead attention; they are then
    combined across heads (arithmetic mean, or learned convex weights) and
    applied to the unprojected tokens, so every output token is a convex
    combination of input tokens.
    """

    def __init__(self, d, h, rng, head_weights="mean"):
        self.maps = _AttentionMaps(d, h, rng)
        self.head_logits = _param(np.zeros(h)) if head_weights == "learned" else None
        self.last_maps = None

    def combined_map(self, x):
        A = self.maps.heads(x)
        self.last_maps = A.data
        if self.head_logits is None:
            return ad.mean(A, axis=1)
        w = ad.reshape(ad.softmax(self.head_logits), (1, -1, 1, 1))
        return ad.tsum(ad.mul(A, w), axis=1)

    def __call__(self, x):
        with _scope("attention_map"):
            A = self.combined_map(x)
        return ad.matmul(A, x, kind="token_combination")


class ClassicMHA(Module):
    """Multihead attention with per-head value projections, concatenation and output projection."""

    def __init__(self, d, h, rng):
        self.maps = _AttentionMaps(d, h, rng)
        self.v = [Linear(d, d // h, rng, kind="value_projection") for _ in range(h)]
        self.o = Linear(d, d, rng, kind="output_projection")
        self.last_maps = None

    def __call__(self, x):
        with _scope("attention_map"):
            A = self.maps.heads(x)
        self.last_maps = A.data
        heads = []
        for i, proj in enumerate(self.v):
            Ai = ad.slice_axis(A, i, i + 1, axis=1)
            Ai = ad.reshape(Ai, (A.shape[0], A.shape[2], A.shape[3]))
            heads.append(ad.matmul(Ai, proj(x), kind="head_combination"))
        return self.o(ad.concat(heads, axis=-1))


class FeedForward(Module):
    def __init__(self, d, ff_dim, rate, rng):
        self.up = TriangularLinear(d, ff_dim, rng)
        self.down = TriangularLinear(ff_dim, d, rng)
        self.rate = rate

    def __call__(self, x, train=False, rng=None):
        return self.down(ad.dropout(ad.relu(self.up(x)), self.rate, train, rng))


class EncoderLayer(Module):
    """Post-norm residual block: ``LN(x + MHA(x))`` then ``LN(x' + FF(x'))``."""

    def __init__(self, cfg: ModelConfig, rng):
        d = cfg.d_model
        if cfg.mha_kind == "SP":
            self.mha = SPMHA(d, cfg.h, rng, cfg.head_weights)
        else:
            self.mha = ClassicMHA(d, cfg.h, rng)
        self.ln1 = LayerNorm(d)
        self.ff = FeedForward(d, cfg.ff_dim, cfg.dropout, rng)
        self.ln2 = LayerNorm(d)

    def __call__(self, x, train=False, rng=None):
        x = self.ln1(ad.add(x, self.mha(x), kind="residual"))
        return self.ln2(ad.add(x, self.ff(x, train, rng), kind="residual"))


class Encoder(Module):
    def __init__(self, cfg, n_layers, max_len, rng, positional=True):
        self.pos = PositionalEncoding(max_len, cfg.d_model, rng) if positional else None
        self.layers = [EncoderLayer(cfg, rng) for _ in range(n_layers)]

    def __call__(self, x, train=False, rng=None):
        if self.pos is not None:
            x = self.pos(x)
        for layer in self.layers:
            x = layer(x, train, rng)
        return x


class Head(Module):
    """Two Linear+ blocks (linear, ReLU, dropout) and a final linear layer."""

    def __init__(self, d_in, hidden, classes, rate, rng):
        sizes = (d_in,) + tuple(hidden)
        self.blocks = [Linear(a, b, rng, kind="dense") for a, b in zip(sizes[:-1], sizes[1:])]
        self.out = Linear(sizes[-1], classes, rng, kind="dense")
        self.rate = rate

    def __call__(self, x, train=False, rng=None):
        for block in self.blocks:
            x = ad.dropout(ad.relu(block(x)), self.rate, train, rng)
        return self.out(x)


class SequenceClassifier(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.input_map = TriangularLinear(cfg.d_in, cfg.d_model, rng)
        self.intra = Encoder(cfg, cfg.n_layers_intra, TOKENS_PER_EPOCH, rng)
        self.inter = Encoder(cfg, cfg.n_layers_inter, cfg.L * cfg.t, rng, cfg.inter_positional)
        self.head = Head(cfg.t * cfg.d_model, cfg.hidden_sizes, cfg.classes, cfg.dropout, rng)

    # stages, usable on their own
    def intra_epoch(self, tokens, train=False, rng=None):
        """``(E, 210, d(p)) -> (E, t, d(p))``: encode then average contiguous chunks."""
        cfg = self.cfg
        if tokens.shape[-2] != TOKENS_PER_EPOCH:
            raise ShapeMismatch(f"expected {TOKENS_PER_EPOCH} tokens per epoch, got {tokens.shape[-2]}")
        x = self.intra(tokens, train, rng)
        E, d = x.shape[0], x.shape[-1]
        x = ad.reshape(x, (E, cfg.t, TOKENS_PER_EPOCH // cfg.t, d))
        return ad.mean(x, axis=2)

    def inter_epoch(self, features, train=False, rng=None):
        """``(B, L*t, d(p)) -> (B, t, d(p))``: tokens of the central epoch after encoding."""
        cfg = self.cfg
        if features.shape[-2] != cfg.L * cfg.t:
            raise ShapeMismatch(f"expected {cfg.L * cfg.t} feature tokens, got {features.shape[-2]}")
        x = self.inter(features, train, rng)
        return ad.slice_axis(x, cfg.ell * cfg.t, (cfg.ell + 1) * cfg.t, axis=1)

    def classify(self, central, train=False, rng=None):
        B = central.shape[0]
        tape = ad.active_tape()
        if tape is not None:
            tape.mark("flatten")
        return self.head(ad.reshape(central, (B, -1)), train, rng)

    def forward(self, windows, train=False, rng=None):
        """Logits ``(B, classes)`` for token windows ``(B, L, 210, d_in)``."""
        cfg = self.cfg
        x = windows if isinstance(windows, Tensor) else Tensor(windows)
        if x.ndim != 4 or x.shape[1:] != (cfg.L, TOKENS_PER_EPOCH, cfg.d_in):
            raise ShapeMismatch(
                f"expected windows of shape (B, {cfg.L}, {TOKENS_PER_EPOCH}, {cfg.d_in}), got {x.shape}"
            )
        B = x.shape[0]
        tape = ad.active_tape()
        if tape is not None:
            tape.mark("tokens_in")
        x = self.input_map(x)
        x = ad.reshape(x, (B * cfg.L, TOKENS_PER_EPOCH, cfg.d_model))
        feats = self.intra_epoch(x, train, rng)
        feats = ad.reshape(feats, (B, cfg.L * cfg.t, cfg.d_model))
        central = self.inter_epoch(feats, train, rng)
        return self.classify(central, train, rng)

    __call__ = forward

    def loss(self, windows, targets, train=False, rng=None):
        logits = self.forward(windows, train, rng)
        return ad.cross_entropy_label_smoothing(logits, targets, self.cfg.label_smoothing)

    def attention_modules(self):
        return [layer.mha for enc in (self.intra, self.inter) for layer in enc.layers]

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_dict(self, state: dict):
        params = self.parameters()
        if set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ShapeMismatch(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ShapeMismatch(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data[...] = state[name]


def dropout_rng(seed: int, step: int) -> np.random.Generator:
    """Counter-based generator: the same ``(seed, step)`` always yields the same masks."""
    return np.random.Generator(np.random.Philox(key=[seed, step]))


def parameter_count(module: Module) -> int:
    return sum(p.size for p in module.parameters().values())


# structure audit

STRUCTURAL_KINDS = {
    "linear_map", "bias", "positional", "residual", "token_combination",
    "relu", "dropout", "layer_norm", "mean", "reshape", "slice",
}


def _audit_op(op) -> str | None:
    kind = op.kind
    if kind not in STRUCTURAL_KINDS:
        return f"{kind}: not a structure-preserving operation"
    if kind == "linear_map":
        d_in, d_out = op.meta["d_in"], op.meta["d_out"]
        if not (is_triangular(d_in) and is_triangular(d_out)):
            return f"linear_map {d_in}->{d_out}: lengths are not both triangular"
    if kind == "token_combination":
        weights = op.inputs[0].data
        if weights.min() < -1e-12 or not np.allclose(weights.sum(axis=-1), 1.0, atol=1e-9):
            return "token_combination: weights are not row-convex"
    if kind == "reshape":
        if op.meta["shape"][-1] != op.inputs[0].shape[-1]:
            return f"reshape to {op.meta['shape']}: splits or merges tokens"
    if kind == "mean" and op.meta.get("axis") in (-1, op.inputs[0].ndim - 1, None):
        return "mean over the token axis"
    return None


def structure_audit(tape: ad.Tape) -> list[str]:
    """Violations among the operations recorded between the model input and the head flatten.

    Operations inside the ``attention_map`` scope only build attention
    weights and are exempt; everything else that touches tokens must be a
    triangular map, a convex token combination, a bias/positional/residual
    addition, ReLU, dropout, layer norm, pooling or a token-preserving
    reshape/slice.
    """
    labels = [op.meta.get("label") if op.kind == "mark" else None for op in tape.ops]
    if "tokens_in" not in labels or "flatten" not in labels:
        raise ValueError("tape does not contain a full model forward pass")
    start = labels.index("tokens_in")
    stop = labels.index("flatten")
    violations = []
    for op in tape.ops[start + 1:stop]:
        if op.kind == "mark" or "attention_map" in op.scope:
            continue
        problem = _audit_op(op)
        if problem:
            violations.append(problem)
    return violations
