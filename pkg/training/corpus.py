"""
W2SC Corpus v1.0
Feature corpus loading, 12-frame segmentation and batch sampling.

A feature directory holds ``whisper/`` and ``normal/`` subdirectories of
``.mel`` files plus a ``norm_stats.json`` per domain. Pairing by file name
is kept for bookkeeping only; no objective consumes aligned pairs.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from audio.features import MEL_SUFFIX, load_norm_stats, read_mel
from audio.signal_engine import MelSpectrogram, NormStats
from networks.base import N_MELS, SEGMENT_FRAMES

DOMAINS = ("whisper", "normal")
LOAD_WORKERS = 4


@dataclass(frozen=True)
class Segment:
    values: np.ndarray              # N_MELS x SEGMENT_FRAMES, time on the last axis
    origin: Tuple[str, int]         # (utterance id, start frame)


@dataclass
class Batch:
    whisper: np.ndarray             # (B, 1, 128, 12)
    normal: np.ndarray              # (B, 1, 128, 12)
    pairs: np.ndarray               # (B, 2) indices into the whisper half, distinct per row


@dataclass
class Corpus:
    whisper: List[MelSpectrogram]
    normal: List[MelSpectrogram]
    whisper_stats: NormStats
    normal_stats: NormStats
    held_out: List[str] = field(default_factory=list)

    def __post_init__(self):
        for domain in DOMAINS:
            utts = getattr(self, domain)
            if not utts:
                raise ValueError(f"Corpus has no {domain} utterances")
            for m in utts:
                if m.frames.shape[1] != N_MELS:
                    raise ValueError(f"{domain}/{m.name}: feature width {m.frames.shape[1]}, expected {N_MELS}")
        self._segments = {d: _stack(getattr(self, d)) for d in DOMAINS}
        for domain, values in self._segments.items():
            if values.shape[0] == 0:
                raise ValueError(f"Corpus has no {SEGMENT_FRAMES}-frame {domain} segments")

    def segment_array(self, domain: str) -> np.ndarray:
        return self._segments[domain]

    def n_segments(self, domain: str) -> int:
        return self._segments[domain].shape[0]


def _stack(utts: Sequence[MelSpectrogram]) -> np.ndarray:
    segs = [s for m in utts for s in segment_utterance(m, "train")]
    if not segs:
        return np.zeros((0, N_MELS, SEGMENT_FRAMES), dtype=np.float32)
    return np.stack([s.values for s in segs]).astype(np.float32)


def segment_utterance(m: MelSpectrogram, mode: str = "train") -> List[Segment]:
    """Cut T x 128 frames into 128 x 12 segments.

    ``train`` keeps non-overlapping windows and drops a remainder shorter than
    12 frames. ``convert`` pads the final window by reflecting the last frames;
    the caller trims back to ``m.n_frames``.
    """
    frames = np.asarray(m.frames)
    t = frames.shape[0]
    if t == 0:
        raise ValueError(f"segment_utterance: {m.name or 'utterance'} has no frames")
    if mode == "train":
        count = t // SEGMENT_FRAMES
    elif mode == "convert":
        count = -(-t // SEGMENT_FRAMES)
        extra = count * SEGMENT_FRAMES - t
        if extra:
            frames = np.pad(frames, ((0, extra), (0, 0)), mode="reflect" if t > 1 else "edge")
    else:
        raise ValueError(f"Unknown segmentation mode: {mode!r}")
    return [
        Segment(frames[k * SEGMENT_FRAMES:(k + 1) * SEGMENT_FRAMES].T.copy(), (m.name, k * SEGMENT_FRAMES))
        for k in range(count)
    ]


def reassemble(values: np.ndarray, n_frames: int) -> np.ndarray:
    """(K, 128, 12) segment values back to (n_frames, 128)."""
    frames = np.concatenate([v.T for v in values], axis=0) if len(values) else np.zeros((0, N_MELS))
    return frames[:n_frames]


def sample_batch(corpus: Corpus, batch_size: int, rng: np.random.Generator) -> Batch:
    """Uniform draws over all segments of each domain, independently.

    Pair row i is (i, j) with j drawn uniformly from the other batch positions.
    """
    w_idx = rng.integers(0, corpus.n_segments("whisper"), size=batch_size)
    n_idx = rng.integers(0, corpus.n_segments("normal"), size=batch_size)
    first = np.arange(batch_size)
    offset = rng.integers(1, batch_size, size=batch_size) if batch_size > 1 else np.zeros(1, dtype=int)
    pairs = np.stack([first, (first + offset) % batch_size], axis=1)
    return Batch(
        whisper=corpus.segment_array("whisper")[w_idx][:, None],
        normal=corpus.segment_array("normal")[n_idx][:, None],
        pairs=pairs,
    )


def _mel_files(directory: Path) -> List[Path]:
    return sorted(directory.glob(f"*{MEL_SUFFIX}"))


def load_corpus(feature_dir: Union[str, Path], holdout: int = 0,
                workers: int = LOAD_WORKERS) -> Corpus:
    """Read both domains; the last ``holdout`` utterance names are kept out of training.

    Files are read on a thread pool; results come back in sorted-name order.
    """
    root = Path(feature_dir)
    files = {}
    for domain in DOMAINS:
        directory = root / domain
        if not directory.is_dir():
            raise FileNotFoundError(f"Missing feature directory: {directory}")
        files[domain] = _mel_files(directory)
        if not files[domain]:
            raise ValueError(f"No {MEL_SUFFIX} files in {directory}")

    names = sorted({p.stem for p in files["whisper"]})
    held_out = names[len(names) - holdout:] if holdout > 0 else []
    if holdout >= len(names) and holdout > 0:
        raise ValueError(f"holdout {holdout} leaves no training utterances out of {len(names)}")

    loaded = {}
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for domain in DOMAINS:
            keep = [p for p in files[domain] if p.stem not in held_out]
            loaded[domain] = list(pool.map(read_mel, keep))

    return Corpus(
        whisper=loaded["whisper"],
        normal=loaded["normal"],
        whisper_stats=load_norm_stats(root / "whisper"),
        normal_stats=load_norm_stats(root / "normal"),
        held_out=held_out,
    )


def batch_rng(seed: int, step: int) -> np.random.Generator:
    """Per-step generator; resuming at ``step`` needs no saved RNG state."""
    return np.random.default_rng([seed, step])


def corpus_from_mels(whisper: Sequence[MelSpectrogram], normal: Sequence[MelSpectrogram],
                     whisper_stats: Optional[NormStats] = None,
                     normal_stats: Optional[NormStats] = None) -> Corpus:
    """In-memory corpus, for tests and desk-scale runs."""
    return Corpus(list(whisper), list(normal),
                  whisper_stats or NormStats(-1.0, 1.0), normal_stats or NormStats(-1.0, 1.0))
