"""
W2SC Generator v1.0
Encoder-decoder with self-attention and skip connections, mapping a batch
of (128 x 12) whisper mel segments to normal-speech segments.

    enc_conv1  3x3 same          (128x12)x1   → (128x12)x64
    attention                    (128x12)x64  → (128x12)x64
    pad time 12 → 14             (128x12)x64  → (128x14)x64
    down1      128x3 valid       (128x14)x64  → (1x12)x256
    down2      1x9 stride (1,2)  (1x12)x256   → (1x6)x256
    down3      1x7 stride (1,2)  (1x6)x256    → (1x3)x256
    up1        1x7 transpose     (1x3)x256    → (1x6)x256, ++ down2 → (1x6)x512
    up2        1x9 transpose     (1x6)x512    → (1x12)x256, ++ down1 → (1x12)x512
    up3        128x1 transpose   (1x12)x512   → (128x12)x1, tanh
"""

from __future__ import annotations

import numpy as np

from networks.attention import CHANNELS, AttentionParams, attention_forward
from networks.base import N_MELS, SEGMENT_FRAMES, NetworkConfig, ParamSet, Trace, check_segments, expect, record
from tensorcore.autodiff import Tensor, concat, leaky_relu, pad, tanh
from tensorcore.layers import conv2d, conv2d_transpose

WIDTH = 256
TIME_PAD = (1, 1)


class GeneratorParams(ParamSet):

    def __init__(self, rng: np.random.Generator, cfg: NetworkConfig = NetworkConfig(), dtype=np.float32):
        super().__init__("G")
        std = cfg.init_std
        self.leaky_slope = cfg.leaky_slope
        self.layer("enc_conv1", (CHANNELS, 1, 3, 3), CHANNELS, rng, std, dtype)
        self.attention = AttentionParams(rng, cfg, prefix="G.attn", dtype=dtype)
        for p in self.attention:
            self._add(p)
        self.layer("down1", (WIDTH, CHANNELS, N_MELS, 3), WIDTH, rng, std, dtype)
        self.layer("down2", (WIDTH, WIDTH, 1, 9), WIDTH, rng, std, dtype)
        self.layer("down3", (WIDTH, WIDTH, 1, 7), WIDTH, rng, std, dtype)
        # transposed weights are (in, out, kh, kw)
        self.layer("up1", (WIDTH, WIDTH, 1, 7), WIDTH, rng, std, dtype)
        self.layer("up2", (2 * WIDTH, WIDTH, 1, 9), WIDTH, rng, std, dtype)
        self.layer("up3", (2 * WIDTH, 1, N_MELS, 1), 1, rng, std, dtype)


def _conv(x, p, name, stride=1, padding="same"):
    return conv2d(x, p[f"{name}.w"], p[f"{name}.b"], stride=stride, padding=padding, stage=name)


def _deconv(x, p, name, stride=1, padding="same"):
    return conv2d_transpose(x, p[f"{name}.w"], p[f"{name}.b"], stride=stride, padding=padding, stage=name)


def generator_forward(a: Tensor, p: GeneratorParams, trace: Trace = None,
                      use_attention: bool = True) -> Tensor:
    """B' = G(A) for an (N, 1, 128, 12) batch; output in (-1, 1).

    ``trace`` collects ``(stage, (H, W, C))`` rows. ``use_attention=False``
    skips the attention block entirely.
    """
    slope = p.leaky_slope
    check_segments("input", a)
    record(trace, "input", a)

    x = leaky_relu(_conv(a, p, "enc_conv1"), slope)
    record(trace, "enc_conv1", expect("enc_conv1", x, (CHANNELS, N_MELS, SEGMENT_FRAMES)))
    if use_attention:
        x = attention_forward(x, p.attention, trace)
    record(trace, "attention", x)
    x = pad(x, ((0, 0), (0, 0), (0, 0), TIME_PAD))
    record(trace, "pad", expect("pad", x, (CHANNELS, N_MELS, SEGMENT_FRAMES + sum(TIME_PAD))))

    d1 = leaky_relu(_conv(x, p, "down1", padding="valid"), slope)
    record(trace, "down1", expect("down1", d1, (WIDTH, 1, 12)))
    d2 = leaky_relu(_conv(d1, p, "down2", stride=(1, 2)), slope)
    record(trace, "down2", expect("down2", d2, (WIDTH, 1, 6)))
    d3 = leaky_relu(_conv(d2, p, "down3", stride=(1, 2)), slope)
    record(trace, "down3", expect("down3", d3, (WIDTH, 1, 3)))

    u1 = leaky_relu(_deconv(d3, p, "up1", stride=(1, 2)), slope)
    u1 = concat([expect("up1", u1, (WIDTH, 1, 6)), d2], axis=1)
    record(trace, "up1", u1)
    u2 = leaky_relu(_deconv(u1, p, "up2", stride=(1, 2)), slope)
    u2 = concat([expect("up2", u2, (WIDTH, 1, 12)), d1], axis=1)
    record(trace, "up2", u2)
    out = tanh(_deconv(u2, p, "up3", padding="valid"))
    record(trace, "up3", expect("up3", out, (1, N_MELS, SEGMENT_FRAMES)))
    return out
