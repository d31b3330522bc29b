"""
W2SC Feature Store v1.0
Binary mel feature files and per-domain normalization statistics.

Mel file layout (little-endian):
    b"W2SC-MEL1" | u32 T | u32 n_mels | f32 T*n_mels row-major | f32 lo | f32 hi
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from audio.signal_engine import MelSpectrogram, NormStats
from w2sc_utils import atomic_save, atomic_write_bytes, load_json

MEL_MAGIC = b"W2SC-MEL1"
MEL_SUFFIX = ".mel"
STATS_FILENAME = "norm_stats.json"
_HEADER = struct.Struct("<II")
_STATS = struct.Struct("<ff")


class MelFormatError(ValueError):
    """A mel feature file is truncated or carries the wrong magic."""


def encode_mel(m: MelSpectrogram) -> bytes:
    t, n_mels = m.frames.shape
    body = m.frames.astype("<f4").tobytes(order="C")
    return MEL_MAGIC + _HEADER.pack(t, n_mels) + body + _STATS.pack(m.norm_stats.lo, m.norm_stats.hi)


def decode_mel(data: bytes, name: str = "") -> MelSpectrogram:
    label = name or "mel data"
    if not data.startswith(MEL_MAGIC):
        raise MelFormatError(f"{label}: bad magic")
    offset = len(MEL_MAGIC)
    if len(data) < offset + _HEADER.size:
        raise MelFormatError(f"{label}: truncated header")
    t, n_mels = _HEADER.unpack_from(data, offset)
    offset += _HEADER.size
    expected = offset + 4 * t * n_mels + _STATS.size
    if len(data) != expected:
        raise MelFormatError(f"{label}: expected {expected} bytes, found {len(data)}")
    frames = np.frombuffer(data, dtype="<f4", count=t * n_mels, offset=offset)
    lo, hi = _STATS.unpack_from(data, offset + 4 * t * n_mels)
    return MelSpectrogram(frames.reshape(t, n_mels).astype(np.float32), NormStats(lo, hi), name)


def write_mel(m: MelSpectrogram, path: Union[str, Path]) -> None:
    atomic_write_bytes(encode_mel(m), Path(path))


def read_mel(path: Union[str, Path]) -> MelSpectrogram:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Mel file not found: {path}")
    return decode_mel(path.read_bytes(), path.stem)


def corpus_norm_stats(log_mels: Iterable[np.ndarray]) -> NormStats:
    """Min and max over every log-mel value of a domain."""
    lo, hi = np.inf, -np.inf
    for logm in log_mels:
        if logm.size:
            lo = min(lo, float(logm.min()))
            hi = max(hi, float(logm.max()))
    if not np.isfinite(lo):
        raise ValueError("corpus_norm_stats: no frames")
    # rounded to f32 so the stats read back from feature files are identical
    return NormStats(float(np.float32(lo)), float(np.float32(hi)))


def save_norm_stats(stats: NormStats, directory: Union[str, Path]) -> Path:
    path = Path(directory) / STATS_FILENAME
    atomic_save(stats.to_dict(), path)
    return path


def load_norm_stats(directory: Union[str, Path]) -> NormStats:
    path = Path(directory) / STATS_FILENAME
    if not path.exists():
        raise FileNotFoundError(f"Normalization stats not found: {path}")
    return NormStats.from_dict(load_json(path))
