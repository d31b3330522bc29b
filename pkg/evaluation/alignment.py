"""
W2SC Alignment v1.0
Dynamic time warping between two feature matrices (frames on axis 0) under
Euclidean frame distance, with the standard three-step recursion

    D[i, j] = d(i, j) + min(D[i-1, j-1], D[i, j-1], D[i-1, j])

The accumulation and backtrack are librosa's; a step replaces the running
minimum only when strictly cheaper, so the diagonal wins ties.
"""

from __future__ import annotations

from dataclasses import dataclass

import librosa
import numpy as np

_STEPS = ((1, 1), (0, 1), (1, 0))


@dataclass(frozen=True)
class AlignmentPath:
    pairs: np.ndarray               # K x 2 index pairs (i into x, j into y)
    cost: float

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64)
        object.__setattr__(self, "pairs", pairs)
        if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] == 0:
            raise ValueError(f"alignment path must be K x 2 with K >= 1, got {pairs.shape}")
        if tuple(pairs[0]) != (0, 0):
            raise ValueError(f"alignment path must start at (0, 0), got {tuple(pairs[0])}")
        steps = {tuple(s) for s in np.diff(pairs, axis=0)}
        if not steps <= set(_STEPS):
            raise ValueError(f"alignment path has illegal steps {sorted(steps - set(_STEPS))}")

    def __len__(self) -> int:
        return self.pairs.shape[0]

    @property
    def x_index(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def y_index(self) -> np.ndarray:
        return self.pairs[:, 1]


def dtw_align(x: np.ndarray, y: np.ndarray) -> AlignmentPath:
    """Minimal-cost monotone alignment of ``x`` (T1 x F) and ``y`` (T2 x F)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ValueError(f"dtw_align expects 2-D feature matrices, got {x.shape} and {y.shape}")
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("dtw_align: empty sequence")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dtw_align: feature widths differ ({x.shape[1]} vs {y.shape[1]})")
    # librosa takes features x frames and returns the path from the far corner back
    acc, wp = librosa.sequence.dtw(X=x.T, Y=y.T, metric="euclidean", step_sizes_sigma=np.array(_STEPS),
                                   backtrack=True)
    return AlignmentPath(wp[::-1], float(acc[-1, -1]))
