"""
W2SC Pitch v1.0
Frame-wise F0 by normalized cross-correlation (NCCF) with a clarity-based
voicing decision.

For a frame x[t : t+N] and lag L the NCCF is

    sum x[n] x[n+L] / sqrt(sum x[n]^2 * sum x[n+L]^2)

over the lag range [sr / f0_ceil, sr / f0_floor]. A frame is voiced when its
best NCCF reaches ``clarity``; the pitch lag is the shortest local peak within
5% of the best one, refined by parabolic interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field, model_validator

from audio.signal_engine import Waveform

# ── Estimator defaults ─────────────────────────────
FRAME_MS = 25.0
HOP_MS = 10.0
F0_FLOOR = 60.0
F0_CEIL = 400.0
CLARITY = 0.3
PEAK_RATIO = 0.95
SILENCE_ENERGY = 1e-10


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    frame_ms: float = Field(FRAME_MS, gt=0)
    hop_ms: float = Field(HOP_MS, gt=0)
    f0_floor: float = Field(F0_FLOOR, gt=0)
    f0_ceil: float = Field(F0_CEIL, gt=0)
    clarity: float = Field(CLARITY, gt=0, le=1)

    @model_validator(mode="after")
    def _check_range(self) -> "EvalConfig":
        if self.f0_floor >= self.f0_ceil:
            raise ValueError(f"f0_floor {self.f0_floor} must be below f0_ceil {self.f0_ceil}")
        return self


@dataclass(frozen=True)
class F0Track:
    f0: np.ndarray                  # Hz per frame, 0 = unvoiced
    hop_s: float
    frame_s: float = 0.0            # analysis window length; frame k is centred at k*hop_s + frame_s/2

    @property
    def voiced(self) -> np.ndarray:
        return self.f0 > 0

    @property
    def voiced_fraction(self) -> float:
        return float(self.voiced.mean()) if self.f0.size else 0.0

    def times(self) -> np.ndarray:
        return np.arange(self.f0.size) * self.hop_s + self.frame_s / 2


def _refine(curve: np.ndarray, k: int) -> float:
    if k <= 0 or k >= curve.size - 1:
        return 0.0
    left, mid, right = curve[k - 1], curve[k], curve[k + 1]
    denom = left - 2 * mid + right
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def _frame_pitch(segment: np.ndarray, frame: int, min_lag: int, max_lag: int,
                 sample_rate: int, cfg: EvalConfig) -> float:
    head = segment[:frame]
    e0 = float(head @ head)
    if e0 < SILENCE_ENERGY:
        return 0.0
    windows = sliding_window_view(segment, frame)[min_lag - 1:max_lag + 2]
    energies = np.einsum("ij,ij->i", windows, windows)
    numer = windows @ head
    curve = np.where(energies > SILENCE_ENERGY, numer / np.sqrt(e0 * np.maximum(energies, SILENCE_ENERGY)), 0.0)
    inner = curve[1:-1]             # lags min_lag .. max_lag
    best = float(inner.max())
    if best < cfg.clarity:
        return 0.0
    peaks = (inner >= curve[:-2]) & (inner >= curve[2:]) & (inner >= PEAK_RATIO * best)
    k = int(np.argmax(peaks)) if peaks.any() else int(np.argmax(inner))
    lag = min_lag + k + _refine(curve, k + 1)
    return float(np.clip(sample_rate / lag, cfg.f0_floor, cfg.f0_ceil))


def estimate_f0(w: Waveform, cfg: EvalConfig = EvalConfig()) -> F0Track:
    """Per-frame F0 of ``w``; frames start every ``hop_ms`` and span ``frame_ms``."""
    sr = w.sample_rate
    frame = max(1, int(round(cfg.frame_ms * sr / 1000.0)))
    hop = max(1, int(round(cfg.hop_ms * sr / 1000.0)))
    min_lag = max(2, int(np.floor(sr / cfg.f0_ceil)))
    max_lag = int(np.ceil(sr / cfg.f0_floor))
    x = w.samples - w.samples.mean() if len(w) else w.samples
    n_frames = 1 + max(0, len(x) - frame) // hop if len(x) else 0
    padded = np.concatenate([x, np.zeros(frame + max_lag + 2)])
    f0 = np.array([
        _frame_pitch(padded[i * hop:i * hop + frame + max_lag + 2], frame, min_lag, max_lag, sr, cfg)
        for i in range(n_frames)
    ])
    return F0Track(f0, hop / sr, frame / sr)
