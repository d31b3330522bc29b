"""
W2SC Metrics v1.0
F0 RMSE over DTW-aligned frame pairs, mel-cepstral distortion and the aligned
per-frame F0 contour.

    rmse (literal)      sqrt( sum_k (F0c_k - F0t_k)^2 )
    rmse (normalized)   sqrt( mean_k (F0c_k - F0t_k)^2 )
    MCD                 mean over the path of (10 / ln 10) * sqrt(2 * sum_d (c_d - t_d)^2)

The ``processed`` variant drops pairs whose reference frame is silent or
unvoiced. Cepstra are the orthonormal DCT-II of each log-mel frame without
the energy coefficient c0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.fft import dct

from audio.signal_engine import MelFilterbank, MelSpectrogram, SignalConfig, Waveform, frame_silence_mask, log_mel
from evaluation.alignment import AlignmentPath, dtw_align
from evaluation.pitch import EvalConfig, F0Track, estimate_f0

VARIANTS = ("original", "processed")
MCD_SCALE = 10.0 / np.log(10.0)
CONTOUR_COLUMNS = ["time", "f0_converted", "f0_reference"]


class EmptyComparisonError(ValueError):
    """No frame pairs are left to compare."""


class RmseF0(NamedTuple):
    literal: float
    normalized: float
    k: int


@dataclass(frozen=True)
class PairMetrics:
    id: str
    rmse_f0_original: float
    rmse_f0_processed: float
    rmse_f0_normalized: float
    mcd_db: float
    voiced_frame_fraction: float
    contour: Optional[pd.DataFrame] = field(default=None, compare=False, repr=False)

    def row(self) -> dict:
        return {
            "id": self.id,
            "rmse_f0_original": self.rmse_f0_original,
            "rmse_f0_processed": self.rmse_f0_processed,
            "rmse_f0_normalized": self.rmse_f0_normalized,
            "mcd_db": self.mcd_db,
            "voiced_frame_fraction": self.voiced_frame_fraction,
        }


def rmse_f0(c: F0Track, t: F0Track, variant: str = "original",
            silent: Optional[np.ndarray] = None) -> RmseF0:
    """F0 error between aligned tracks (frame k of ``c`` pairs with frame k of ``t``).

    ``silent`` marks reference frames below the silence threshold; only the
    processed variant uses it, together with the reference voicing.
    """
    if variant not in VARIANTS:
        raise ValueError(f"Unknown RMSE variant: {variant!r}")
    if c.f0.shape != t.f0.shape:
        raise ValueError(f"rmse_f0: tracks are not aligned ({c.f0.size} vs {t.f0.size} frames)")
    keep = np.ones(t.f0.size, dtype=bool)
    if variant == "processed":
        keep &= t.voiced
        if silent is not None:
            keep &= ~np.asarray(silent, dtype=bool)
    k = int(keep.sum())
    if k == 0:
        raise EmptyComparisonError(f"rmse_f0 ({variant}): no frame pairs left to compare")
    sq = (c.f0[keep] - t.f0[keep]) ** 2
    return RmseF0(float(np.sqrt(sq.sum())), float(np.sqrt(sq.mean())), k)


def _f0_index(track: F0Track, mel_index: np.ndarray, mel_hop_s: float) -> np.ndarray:
    if track.f0.size == 0:
        raise EmptyComparisonError("align_f0_pairs: empty F0 track")
    idx = np.rint((mel_index * mel_hop_s - track.frame_s / 2) / track.hop_s).astype(np.int64)
    return np.clip(idx, 0, track.f0.size - 1)


def align_f0_pairs(c: F0Track, t: F0Track, path: AlignmentPath,
                   mel_hop_s: float) -> Tuple[F0Track, F0Track, np.ndarray]:
    """Map a mel-frame DTW path onto F0 frames by time.

    Returns the two tracks resampled along the path plus the reference
    mel-frame index of every pair (for the silence mask).
    """
    ci = _f0_index(c, path.x_index, mel_hop_s)
    ti = _f0_index(t, path.y_index, mel_hop_s)
    return (F0Track(c.f0[ci], c.hop_s, c.frame_s),
            F0Track(t.f0[ti], t.hop_s, t.frame_s),
            path.y_index)


def aligned_f0_contour(c: F0Track, t: F0Track, path: AlignmentPath, mel_hop_s: float) -> pd.DataFrame:
    """One row per path pair: reference frame time, converted F0, reference F0 (0 = unvoiced)."""
    ci = _f0_index(c, path.x_index, mel_hop_s)
    ti = _f0_index(t, path.y_index, mel_hop_s)
    return pd.DataFrame({"time": t.times()[ti], "f0_converted": c.f0[ci], "f0_reference": t.f0[ti]},
                        columns=CONTOUR_COLUMNS)


def mel_cepstrum(log_mel_frames: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II along the mel axis, energy term dropped."""
    return dct(np.asarray(log_mel_frames, dtype=np.float64), type=2, norm="ortho", axis=-1)[:, 1:]


def _log_domain(m: Union[MelSpectrogram, np.ndarray]) -> np.ndarray:
    return m.log_domain() if isinstance(m, MelSpectrogram) else np.asarray(m, dtype=np.float64)


def mel_cepstral_distortion(c: Union[MelSpectrogram, np.ndarray], t: Union[MelSpectrogram, np.ndarray],
                            path: AlignmentPath) -> float:
    cc = mel_cepstrum(_log_domain(c))[path.x_index]
    tc = mel_cepstrum(_log_domain(t))[path.y_index]
    per_frame = MCD_SCALE * np.sqrt(2.0 * np.sum((cc - tc) ** 2, axis=1))
    return float(per_frame.mean())


def evaluate_pair(name: str, converted: Waveform, reference: Waveform, fb: MelFilterbank,
                  signal_cfg: SignalConfig = SignalConfig(),
                  eval_cfg: EvalConfig = EvalConfig()) -> PairMetrics:
    """All metrics for one converted/reference utterance.

    DTW runs on raw log-mel frames; RMSE variants with no frames left are NaN.
    The aligned F0 contour rides along in ``contour`` and stays out of ``row()``.
    """
    c_mel = log_mel(converted, fb, signal_cfg.n_fft, signal_cfg.hop, signal_cfg.log_floor)
    t_mel = log_mel(reference, fb, signal_cfg.n_fft, signal_cfg.hop, signal_cfg.log_floor)
    path = dtw_align(c_mel, t_mel)

    c_f0 = estimate_f0(converted, eval_cfg)
    t_f0 = estimate_f0(reference, eval_cfg)
    mel_hop_s = signal_cfg.hop / signal_cfg.sample_rate
    c_pairs, t_pairs, t_frames = align_f0_pairs(c_f0, t_f0, path, mel_hop_s)
    silent = frame_silence_mask(t_mel, signal_cfg.silence_db)[t_frames]

    original = rmse_f0(c_pairs, t_pairs, "original")
    try:
        processed = rmse_f0(c_pairs, t_pairs, "processed", silent)
    except EmptyComparisonError:
        processed = RmseF0(float("nan"), float("nan"), 0)

    return PairMetrics(
        id=name,
        rmse_f0_original=original.literal,
        rmse_f0_processed=processed.literal,
        rmse_f0_normalized=processed.normalized,
        mcd_db=mel_cepstral_distortion(c_mel, t_mel, path),
        voiced_frame_fraction=c_f0.voiced_fraction,
        contour=aligned_f0_contour(c_f0, t_f0, path, mel_hop_s),
    )
