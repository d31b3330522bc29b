"""
W2SC Signal Engine v1.0
Audio I/O, STFT and log-mel analysis, mel inversion, Griffin-Lim
reconstruction and the silence mask used by evaluation.

Analysis conventions: Hann window, centred frames with reflect padding, so an
utterance of n samples has 1 + n // hop frames. Log-mel values are
log(max(fb · |STFT|, floor)); the model sees them min-max mapped to [-1, 1]
with corpus statistics.

Usage:
    cfg = SignalConfig()
    fb = build_filterbank(cfg)
    mel = mel_spectrogram(load_wav(path, cfg.sample_rate), fb, cfg, stats)
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import librosa
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg
from scipy.io import wavfile
from scipy.signal import resample_poly
from scipy.special import logsumexp

from w2sc_utils import atomic_write_bytes

# ── Analysis defaults ──────────────────────────────
SAMPLE_RATE = 16000
N_FFT = 1024
HOP = 256
N_MELS = 128
F_MIN = 0.0
F_MAX = 8000.0
LOG_FLOOR = 1e-5

# ── Reconstruction / masking ───────────────────────
GRIFFIN_LIM_ITERS = 60
SILENCE_DB = 40.0
MEL_RIDGE = 1e-8                # ridge weight, relative to mean diagonal of fb·fbᵀ
STATS_EPS = 1e-12


class WavFormatError(ValueError):
    """The file is not a readable 16-bit PCM WAV."""


class SignalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sample_rate: int = Field(SAMPLE_RATE, gt=0)
    n_fft: int = Field(N_FFT, gt=0)
    hop: int = Field(HOP, gt=0)
    n_mels: int = Field(N_MELS, gt=0)
    f_min: float = Field(F_MIN, ge=0)
    f_max: float = Field(F_MAX, gt=0)
    log_floor: float = Field(LOG_FLOOR, gt=0)
    griffin_lim_iters: int = Field(GRIFFIN_LIM_ITERS, ge=1)
    silence_db: float = Field(SILENCE_DB, gt=0)

    @model_validator(mode="after")
    def _check_geometry(self) -> "SignalConfig":
        if self.n_fft & (self.n_fft - 1):
            raise ValueError(f"n_fft must be a power of two, got {self.n_fft}")
        if self.hop > self.n_fft:
            raise ValueError(f"hop {self.hop} exceeds n_fft {self.n_fft}")
        if self.f_max > self.sample_rate / 2:
            raise ValueError(f"f_max {self.f_max} above Nyquist {self.sample_rate / 2}")
        if self.f_min >= self.f_max:
            raise ValueError(f"f_min {self.f_min} must be below f_max {self.f_max}")
        return self

    @property
    def n_bins(self) -> int:
        return 1 + self.n_fft // 2


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class ComplexSpectrogram:
    """T x (1 + n_fft/2) complex frames."""
    frames: np.ndarray
    n_fft: int
    hop: int
    window: Union[str, np.ndarray] = "hann"

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.frames)


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray          # n_mels x (1 + n_fft/2), nonnegative
    f_min: float
    f_max: float
    sample_rate: int
    n_fft: int

    @property
    def centers(self) -> np.ndarray:
        """Centre frequency of each band in Hz, strictly increasing."""
        n_mels = self.weights.shape[0]
        return librosa.mel_frequencies(n_mels + 2, fmin=self.f_min, fmax=self.f_max)[1:-1]


@dataclass(frozen=True)
class NormStats:
    """Min/max of a domain's log-mel values; maps [lo, hi] onto [-1, 1]."""
    lo: float
    hi: float

    @property
    def degenerate(self) -> bool:
        return not (self.hi - self.lo > STATS_EPS)

    def normalize(self, log_mel: np.ndarray) -> np.ndarray:
        if self.degenerate:
            return np.full_like(log_mel, -1.0)
        scaled = 2.0 * (log_mel - self.lo) / (self.hi - self.lo) - 1.0
        return np.clip(scaled, -1.0, 1.0)

    def denormalize(self, frames: np.ndarray) -> np.ndarray:
        if self.degenerate:
            return np.full_like(frames, self.lo)
        return (np.asarray(frames) + 1.0) * 0.5 * (self.hi - self.lo) + self.lo

    def to_dict(self) -> dict:
        return {"lo": float(self.lo), "hi": float(self.hi)}

    @classmethod
    def from_dict(cls, data: dict) -> "NormStats":
        return cls(lo=float(data["lo"]), hi=float(data["hi"]))


@dataclass(frozen=True)
class MelSpectrogram:
    """T x n_mels normalized log-mel frames with the stats that produced them."""
    frames: np.ndarray
    norm_stats: NormStats
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.frames.ndim != 2:
            raise ValueError(f"mel frames must be 2-D, got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("mel frames contain non-finite values")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def log_domain(self) -> np.ndarray:
        return self.norm_stats.denormalize(self.frames)


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------

def load_wav(path: Union[str, Path], sample_rate: int = SAMPLE_RATE) -> Waveform:
    """Read 16-bit PCM, keep the first channel, scale to [-1, 1], resample to ``sample_rate``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"WAV not found: {path}")
    try:
        rate, data = wavfile.read(path)
    except (ValueError, EOFError) as exc:
        raise WavFormatError(f"{path}: malformed WAV ({exc})") from exc
    if data.dtype != np.int16:
        raise WavFormatError(f"{path}: unsupported encoding {data.dtype}, expected 16-bit PCM")
    if data.ndim == 2:
        data = data[:, 0]
    samples = data.astype(np.float64) / 32768.0
    if rate != sample_rate:
        g = math.gcd(int(rate), int(sample_rate))
        samples = resample_poly(samples, sample_rate // g, rate // g)
        samples = np.clip(samples, -1.0, 1.0)
    return Waveform(samples, sample_rate)


def write_wav(w: Waveform, path: Union[str, Path]) -> None:
    """Write 16-bit PCM; samples outside [-1, 1] are clipped."""
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767.0).astype(np.int16)
    buf = io.BytesIO()
    wavfile.write(buf, w.sample_rate, pcm)
    atomic_write_bytes(buf.getvalue(), Path(path))


# ---------------------------------------------------------------------------
# Analysis
# ---------------------------------------------------------------------------

def _check_fft(n_fft: int, hop: int) -> None:
    if n_fft <= 0 or n_fft & (n_fft - 1):
        raise ValueError(f"n_fft must be a power of two, got {n_fft}")
    if not 0 < hop <= n_fft:
        raise ValueError(f"hop must be in (0, n_fft], got {hop}")


def stft(w: Waveform, n_fft: int = N_FFT, hop: int = HOP,
         window: Union[str, np.ndarray] = "hann") -> ComplexSpectrogram:
    """Frame t covers padded samples [t*hop, t*hop + n_fft)."""
    _check_fft(n_fft, hop)
    if len(w) == 0:
        raise ValueError("stft: empty waveform")
    spec = librosa.stft(w.samples, n_fft=n_fft, hop_length=hop, window=window,
                        center=True, pad_mode="reflect")
    return ComplexSpectrogram(spec.T, n_fft, hop, window)


def istft(spec: ComplexSpectrogram, length: Optional[int] = None,
          sample_rate: int = SAMPLE_RATE) -> Waveform:
    y = librosa.istft(spec.frames.T, hop_length=spec.hop, n_fft=spec.n_fft,
                      window=spec.window, center=True, length=length)
    return Waveform(y, sample_rate)


def build_filterbank(cfg: SignalConfig = SignalConfig()) -> MelFilterbank:
    """Slaney-scale triangular filters with unit peak."""
    weights = librosa.filters.mel(sr=cfg.sample_rate, n_fft=cfg.n_fft, n_mels=cfg.n_mels,
                                  fmin=cfg.f_min, fmax=cfg.f_max, htk=False, norm=None)
    return MelFilterbank(weights.astype(np.float64), cfg.f_min, cfg.f_max, cfg.sample_rate, cfg.n_fft)


def log_mel(w: Waveform, fb: MelFilterbank, n_fft: int = N_FFT, hop: int = HOP,
            floor: float = LOG_FLOOR) -> np.ndarray:
    """Unnormalized T x n_mels log-mel matrix."""
    if fb.n_fft != n_fft:
        raise ValueError(f"filterbank built for n_fft={fb.n_fft}, analysis uses {n_fft}")
    mel = stft(w, n_fft, hop).magnitude @ fb.weights.T
    return np.log(np.maximum(mel, floor))


def mel_spectrogram(w: Waveform, fb: MelFilterbank, cfg: SignalConfig = SignalConfig(),
                    stats: Optional[NormStats] = None, name: str = "") -> MelSpectrogram:
    """Normalized log-mel features. Without ``stats`` the utterance's own range is used."""
    logm = log_mel(w, fb, cfg.n_fft, cfg.hop, cfg.log_floor)
    if stats is None:
        stats = NormStats(float(logm.min()), float(logm.max()))
    return MelSpectrogram(stats.normalize(logm), stats, name)


# ---------------------------------------------------------------------------
# Reconstruction
# ---------------------------------------------------------------------------

def invert_mel(log_mel_frames: np.ndarray, fb: MelFilterbank) -> np.ndarray:
    """Linear magnitudes S (T x bins) from log-mel frames.

    Minimum-norm ridge solution of fb · S = exp(log mel), negatives clipped.
    """
    target = np.exp(np.asarray(log_mel_frames, dtype=np.float64))
    a = fb.weights
    gram = a @ a.T
    ridge = MEL_RIDGE * np.trace(gram) / gram.shape[0]
    coef = linalg.solve(gram + ridge * np.eye(gram.shape[0]), target.T, assume_a="pos")
    return np.maximum(coef.T @ a, 0.0)


def spectral_convergence(estimate: np.ndarray, target: np.ndarray) -> float:
    """‖estimate − target‖ / ‖target‖ (0 for an all-zero target)."""
    norm = float(np.linalg.norm(target))
    if norm == 0.0:
        return 0.0
    return float(np.linalg.norm(estimate - target)) / norm


def griffin_lim(mag: np.ndarray, iterations: int = GRIFFIN_LIM_ITERS, n_fft: int = N_FFT,
                hop: int = HOP, sample_rate: int = SAMPLE_RATE, init: str = "zero",
                seed: int = 0, callback: Optional[Callable[[int, float], None]] = None) -> Waveform:
    """Phase retrieval for a T x bins magnitude matrix.

    Each iteration inverts the current complex estimate, re-analyses it and
    keeps only the new phase. ``callback(i, err)`` receives the spectral
    convergence after iteration ``i``.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    mag = np.asarray(mag, dtype=np.float64)
    if np.any(mag < 0):
        raise ValueError("griffin_lim: magnitude must be nonnegative")
    _check_fft(n_fft, hop)
    length = hop * (mag.shape[0] - 1)
    if init == "zero":
        phase = np.ones_like(mag, dtype=np.complex128)
    elif init == "random":
        phase = np.exp(2j * np.pi * np.random.default_rng(seed).random(mag.shape))
    else:
        raise ValueError(f"Unknown init: {init!r}")

    for i in range(iterations):
        y = istft(ComplexSpectrogram(mag * phase, n_fft, hop), length, sample_rate)
        rebuilt = stft(y, n_fft, hop).frames if length > 0 else mag * phase
        amp = np.abs(rebuilt)
        phase = np.where(amp > 0, rebuilt / np.maximum(amp, 1e-300), 1.0 + 0j)
        if callback is not None:
            callback(i, spectral_convergence(amp, mag))
    return istft(ComplexSpectrogram(mag * phase, n_fft, hop), length, sample_rate)


def frame_silence_mask(m: Union[MelSpectrogram, np.ndarray], threshold_db: float = SILENCE_DB) -> np.ndarray:
    """True for frames whose energy is more than ``threshold_db`` below the loudest frame.

    Arrays are taken as raw log-mel; a MelSpectrogram is denormalized first.
    """
    logm = m.log_domain() if isinstance(m, MelSpectrogram) else np.asarray(m, dtype=np.float64)
    if logm.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    energy_db = (10.0 / np.log(10.0)) * logsumexp(2.0 * logm, axis=1)
    return energy_db < energy_db.max() - threshold_db
