"""
W2SC Synthetic Corpus v1.0
Paired "normal" and "whisper" utterances for desk-scale checks.

Each pair shares one random three-formant filter (a parallel bank of
peak-normalized two-pole resonators plus a direct path). The normal twin
excites it with a harmonic source gliding between random F0 values in
100-300 Hz; the whisper twin excites it with white noise and sits 20 dB lower
in RMS.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from scipy.signal import lfilter
from tqdm import tqdm

from audio.signal_engine import SAMPLE_RATE, Waveform, write_wav
from w2sc_utils import log

# ── Source ─────────────────────────────────────────
F0_RANGE = (100.0, 300.0)
GLIDE_RANGE = (0.8, 1.25)
VIBRATO_HZ = 5.0
VIBRATO_DEPTH = 0.02
N_HARMONICS = 24                # 24 x 300 Hz stays below 0.45 x 16 kHz

# ── Filter ─────────────────────────────────────────
FORMANT_RANGES = ((300.0, 800.0), (900.0, 2200.0), (2300.0, 3200.0))
BANDWIDTH_RANGE = (200.0, 350.0)
DIRECT_GAIN = 1.0

# ── Levels and timing ──────────────────────────────
NORMAL_RMS = 0.1
WHISPER_DB = -20.0
DURATION_RANGE = (0.8, 1.6)
FADE_S = 0.02
PEAK_LIMIT = 0.99


def resonator(x: np.ndarray, freq: float, bandwidth: float, sample_rate: int) -> np.ndarray:
    """Two-pole resonator with unit gain at ``freq``."""
    r = math.exp(-math.pi * bandwidth / sample_rate)
    theta = 2.0 * math.pi * freq / sample_rate
    gain = (1.0 - r) * math.sqrt(1.0 - 2.0 * r * math.cos(2.0 * theta) + r * r)
    return lfilter([gain], [1.0, -2.0 * r * math.cos(theta), r * r], x)


def formant_filter(x: np.ndarray, formants: List[Tuple[float, float]], sample_rate: int) -> np.ndarray:
    return DIRECT_GAIN * x + sum(resonator(x, f, b, sample_rate) for f, b in formants)


def _fade(x: np.ndarray, sample_rate: int) -> np.ndarray:
    n = min(int(FADE_S * sample_rate), x.size // 2)
    if n:
        ramp = np.linspace(0.0, 1.0, n)
        x = x.copy()
        x[:n] *= ramp
        x[-n:] *= ramp[::-1]
    return x


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def f0_contour(rng: np.random.Generator, n: int, sample_rate: int) -> np.ndarray:
    start = rng.uniform(*F0_RANGE)
    end = np.clip(start * rng.uniform(*GLIDE_RANGE), *F0_RANGE)
    t = np.arange(n) / sample_rate
    glide = np.linspace(start, end, n)
    vibrato = 1.0 + VIBRATO_DEPTH * np.sin(2 * np.pi * VIBRATO_HZ * t + rng.uniform(0, 2 * np.pi))
    return np.clip(glide * vibrato, *F0_RANGE)


def synth_pair(index: int, seed: int = 0, sample_rate: int = SAMPLE_RATE) -> Tuple[Waveform, Waveform]:
    """(normal, whisper) twins for utterance ``index``; draws come from (seed, index)."""
    rng = np.random.default_rng([seed, index])
    n = int(rng.uniform(*DURATION_RANGE) * sample_rate)
    formants = [(rng.uniform(*fr), rng.uniform(*BANDWIDTH_RANGE)) for fr in FORMANT_RANGES]

    phase = 2.0 * np.pi * np.cumsum(f0_contour(rng, n, sample_rate)) / sample_rate
    harmonics = np.arange(1, N_HARMONICS + 1)[:, None]
    source = np.sum(np.sin(harmonics * phase[None, :]) / harmonics, axis=0)
    noise = rng.normal(size=n)

    normal = _fade(formant_filter(source, formants, sample_rate), sample_rate)
    whisper = _fade(formant_filter(noise, formants, sample_rate), sample_rate)
    normal *= NORMAL_RMS / _rms(normal)
    whisper *= NORMAL_RMS * 10 ** (WHISPER_DB / 20.0) / _rms(whisper)

    # one shared factor keeps the level difference intact
    peak = max(np.abs(normal).max(), np.abs(whisper).max())
    if peak > PEAK_LIMIT:
        normal *= PEAK_LIMIT / peak
        whisper *= PEAK_LIMIT / peak
    return Waveform(normal, sample_rate), Waveform(whisper, sample_rate)


def utterance_name(index: int) -> str:
    return f"utt_{index:04d}"


def write_synth_corpus(out_dir: Union[str, Path], n_utterances: int, seed: int = 0,
                       sample_rate: int = SAMPLE_RATE) -> List[str]:
    """Write ``whisper/`` and ``normal/`` WAV twins under ``out_dir``; returns the names."""
    if n_utterances < 1:
        raise ValueError(f"n_utterances must be >= 1, got {n_utterances}")
    out = Path(out_dir)
    names = []
    for i in tqdm(range(n_utterances), desc="synth", unit="utt"):
        normal, whisper = synth_pair(i, seed, sample_rate)
        name = utterance_name(i)
        write_wav(normal, out / "normal" / f"{name}.wav")
        write_wav(whisper, out / "whisper" / f"{name}.wav")
        names.append(name)
    log("synth", f"{n_utterances} pairs written to {out} (seed {seed})")
    return names
