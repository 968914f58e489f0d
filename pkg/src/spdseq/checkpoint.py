"""Checkpoint files: a header, a JSON metadata block and named float64 parameters.

Layout (little-endian)::

    8 bytes   magic b"SPDCKPT1"
    u32       version (1)
    u32       metadata length, then that many bytes of UTF-8 JSON
    u32       parameter count
    per parameter:
        u32 name length, UTF-8 name
        u32 ndim, ndim x u32 dims
        prod(dims) x f64 payload
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptCache, VersionMismatch

MAGIC = b"SPDCKPT1"
VERSION = 1


def save_checkpoint(path, params: dict, metadata: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    chunks = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(params))]
    for name, value in params.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        raw = name.encode()
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    """Return ``(params, metadata)`` with ``params`` an ordered name -> ndarray dict."""
    raw = Path(path).read_bytes()
    try:
        if raw[:8] != MAGIC:
            raise CorruptCache(f"{path}: not a checkpoint file")
        version, meta_len = struct.unpack_from("<II", raw, 8)
        if version != VERSION:
            raise VersionMismatch(f"{path}: checkpoint version {version}")
        pos = 16
        metadata = json.loads(raw[pos:pos + meta_len].decode())
        pos += meta_len
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 8 * size > len(raw):
                raise CorruptCache(f"{path}: truncated payload for {name}")
            params[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
            pos += 8 * size
    except struct.error as exc:
        raise CorruptCache(f"{path}: truncated checkpoint") from exc
    if pos != len(raw):
        raise CorruptCache(f"{path}: {len(raw) - pos} trailing bytes")
    return params, metadata
