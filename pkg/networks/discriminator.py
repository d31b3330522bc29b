"""
W2SC Discriminator v1.0
Four spectrally normalized 3x3 stride-2 convolutions and a fully connected
map to one real-valued score per segment (higher means more "real").

    (128x12)x1 → (64x6)x64 → (32x3)x128 → (16x2)x256 → (8x1)x512 → 4096 → 1
"""

from __future__ import annotations

import numpy as np

from networks.base import NetworkConfig, ParamSet, Trace, check_segments, record
from tensorcore.autodiff import Tensor, leaky_relu
from tensorcore.layers import conv2d, linear, spectral_normalize

CONV_WIDTHS = (1, 64, 128, 256, 512)
FLAT_DIM = 512 * 8 * 1


class DiscriminatorParams(ParamSet):

    def __init__(self, rng: np.random.Generator, cfg: NetworkConfig = NetworkConfig(), dtype=np.float32):
        super().__init__("D")
        self.cfg = cfg
        for i, (c_in, c_out) in enumerate(zip(CONV_WIDTHS, CONV_WIDTHS[1:]), start=1):
            self.layer(f"conv{i}", (c_out, c_in, 3, 3), c_out, rng, cfg.init_std, dtype)
        self.layer("fc", (1, FLAT_DIM), 1, rng, cfg.init_std, dtype)

    def normalized_weights(self):
        return [self[f"conv{i}.w"] for i in range(1, len(CONV_WIDTHS))]


def discriminator_forward(s: Tensor, p: DiscriminatorParams, trace: Trace = None,
                          update_sn: bool = True) -> Tensor:
    """Scores of shape (N,). Conv weights are spectrally normalized on every call."""
    check_segments("D.input", s)
    cfg = p.cfg
    x = s
    for i in range(1, len(CONV_WIDTHS)):
        w = spectral_normalize(p[f"conv{i}.w"], cfg.sn_power_iters, cfg.sn_warmup_iters, update=update_sn)
        x = leaky_relu(conv2d(x, w, p[f"conv{i}.b"], stride=2, padding="same", stage=f"D.conv{i}"),
                       cfg.leaky_slope)
        record(trace, f"D.conv{i}", x)
    flat = x.reshape(x.shape[0], -1)
    score = linear(flat, p["fc.w"], p["fc.b"], stage="D.fc")
    record(trace, "D.fc", score)
    return score.reshape(-1)
