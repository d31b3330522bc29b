"""
W2SC Conversion v1.0
Whisper mel-spectrogram → normal mel-spectrogram through a trained generator.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from audio.signal_engine import MelSpectrogram, NormStats
from networks.generator import GeneratorParams, generator_forward
from tensorcore.autodiff import Tensor, no_grad
from training.corpus import reassemble, segment_utterance

CONVERT_BATCH = 32


def convert_utterance(g: GeneratorParams, m: MelSpectrogram,
                      out_stats: Optional[NormStats] = None,
                      batch_size: int = CONVERT_BATCH) -> MelSpectrogram:
    """Segment (reflect-padded), run G per chunk of ``batch_size`` segments, trim to the input length.

    The result lives in the normal domain's normalized space; ``out_stats``
    travels with it for denormalization (defaults to the input's stats).
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    segments = segment_utterance(m, "convert")
    values = np.stack([s.values for s in segments])[:, None].astype(np.float32)
    outputs = []
    with no_grad():
        for start in range(0, len(values), batch_size):
            outputs.append(generator_forward(Tensor(values[start:start + batch_size]), g).data)
    converted = np.concatenate(outputs)[:, 0]
    return MelSpectrogram(
        frames=reassemble(converted, m.n_frames).astype(np.float32),
        norm_stats=out_stats or m.norm_stats,
        name=m.name,
    )
