"""Binary token cache, one file per preprocessed recording.

Layout (all little-endian)::

    offset  size  field
    0       8     magic  b"SPDTOK1\\0"
    8       4     version (u32, currently 1)
    12      4     n      signals per matrix before augmentation
    16      4     k      features per signal
    20      4     m      matrix dimension after augmentation (n + k)
    24      4     p_flag 0: tokens are raw d(m) vectors (no learned map applied)
    28      4     C      channels
    32      4     S      segments per epoch
    36      4     E      epochs
    40      8     strategy tag, ASCII, NUL padded
    48      8     alpha  (f64)
    56      ...   payload: E * C * S * d(m) float32 values

Within an epoch, tokens are stored channel-major (all segments of channel 0
first).
"""
from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import CorruptCache, VersionMismatch
from ..tokens import triangular_dim

MAGIC = b"SPDTOK1\x00"
VERSION = 1
_HEADER = struct.Struct("<8s8I8sd")
HEADER_SIZE = _HEADER.size


@dataclass
class TokenCache:
    n: int
    k: int
    m: int
    p_flag: int
    C: int
    S: int
    strategy: str
    alpha: float
    tokens: np.ndarray  # (E, C*S, d(m)) float32

    @property
    def epochs(self) -> int:
        return self.tokens.shape[0]


def cache_bytes(cache: TokenCache) -> bytes:
    if cache.m != cache.n + cache.k:
        raise CorruptCache("m must equal n + k")
    d = triangular_dim(cache.m)
    toks = np.ascontiguousarray(cache.tokens, dtype="<f4")
    if toks.shape[1:] != (cache.C * cache.S, d):
        raise CorruptCache(f"token array shape {toks.shape} does not match the header")
    header = _HEADER.pack(
        MAGIC, VERSION, cache.n, cache.k, cache.m, cache.p_flag, cache.C, cache.S,
        toks.shape[0], cache.strategy.encode("ascii")[:8], float(cache.alpha),
    )
    return header + toks.tobytes()


def cache_write(path, cache: TokenCache) -> Path:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(cache_bytes(cache))
    os.replace(tmp, path)
    return path


def cache_read(path) -> TokenCache:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise CorruptCache(f"{path}: file shorter than the header")
    magic, version, n, k, m, p_flag, C, S, E, tag, alpha = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptCache(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatch(f"{path}: cache version {version}, expected {VERSION}")
    if m != n + k:
        raise CorruptCache(f"{path}: header m={m} but n+k={n + k}")
    d = triangular_dim(m) if m > 0 else 0
    expected = E * C * S * d * 4
    if len(raw) - HEADER_SIZE != expected:
        raise CorruptCache(f"{path}: payload has {len(raw) - HEADER_SIZE} bytes, header implies {expected}")
    toks = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE).reshape(E, C * S, d)
    return TokenCache(n, k, m, p_flag, C, S, tag.rstrip(b"\x00").decode("ascii"), alpha, toks.copy())


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
