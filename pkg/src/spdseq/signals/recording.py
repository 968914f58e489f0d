"""Recording container and its on-disk directory format.

A recording directory holds ``header.txt`` (``key=value`` lines: ``id``,
``fs``, ``n``, ``epochs``, ``labels`` as a comma-separated list) and
``signals.f64``, the ``n x T`` signal array as little-endian float64 in
row-major order.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError

EPOCH_SECONDS = 30
STAGES = ("Awake", "N1", "N2", "N3", "REM")
HEADER = "header.txt"
SIGNALS = "signals.f64"


@dataclass
class Recording:
    id: str
    fs: int
    signals: np.ndarray  # (n, T)
    labels: np.ndarray  # (E,)

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.signals.ndim != 2 or self.signals.shape[0] < 2:
            raise ConfigError("a recording needs at least two signals")
        if self.fs != int(self.fs) or self.fs <= 90:
            raise ConfigError(f"fs must be an integer above 90 Hz, got {self.fs}")
        self.fs = int(self.fs)
        if self.signals.shape[1] != EPOCH_SECONDS * self.fs * len(self.labels):
            raise ConfigError(
                f"{self.signals.shape[1]} samples do not match {len(self.labels)} epochs at fs={self.fs}"
            )

    @property
    def n_signals(self) -> int:
        return self.signals.shape[0]

    @property
    def n_epochs(self) -> int:
        return len(self.labels)

    def epoch(self, index: int) -> np.ndarray:
        w = EPOCH_SECONDS * self.fs
        return self.signals[:, index * w:(index + 1) * w]


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_recording(rec: Recording, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    header = (
        f"id={rec.id}\nfs={rec.fs}\nn={rec.n_signals}\nepochs={rec.n_epochs}\n"
        f"labels={','.join(str(int(v)) for v in rec.labels)}\n"
    )
    _atomic_write(d / HEADER, header.encode())
    _atomic_write(d / SIGNALS, rec.signals.astype("<f8").tobytes())
    return d


def read_header(directory) -> dict:
    fields = {}
    for line in (Path(directory) / HEADER).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    missing = {"id", "fs", "n", "epochs", "labels"} - fields.keys()
    if missing:
        raise ConfigError(f"recording header is missing {sorted(missing)}")
    return fields


def read_recording(directory) -> Recording:
    h = read_header(directory)
    n, fs, epochs = int(h["n"]), int(h["fs"]), int(h["epochs"])
    labels = [int(v) for v in h["labels"].split(",") if v]
    if len(labels) != epochs:
        raise ConfigError(f"header declares {epochs} epochs but lists {len(labels)} labels")
    raw = np.fromfile(Path(directory) / SIGNALS, dtype="<f8")
    if raw.size != n * EPOCH_SECONDS * fs * epochs:
        raise ConfigError(f"signal file has {raw.size} values, expected {n * EPOCH_SECONDS * fs * epochs}")
    return Recording(h["id"], fs, raw.reshape(n, -1), np.array(labels))


def read_labels(directory) -> np.ndarray:
    return np.array([int(v) for v in read_header(directory)["labels"].split(",") if v])


def read_csv_recording(path, fs: int, labels, rec_id: str | None = None) -> Recording:
    """Toy-input loader: one column per signal, one row per sample."""
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    return Recording(rec_id or Path(path).stem, fs, data.T, np.asarray(labels))


def list_recordings(root) -> list[Path]:
    return sorted(p.parent for p in Path(root).glob(f"*/{HEADER}"))
