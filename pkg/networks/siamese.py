"""
W2SC Siamese Encoder v1.0
Projects a segment to a fixed-length embedding; differences of embeddings are
the transformation vectors the generator must preserve.

    (128x12)x1 → (64x6)x32 → (32x3)x64 → (16x2)x128 → 4096 → embedding_dim
"""

from __future__ import annotations

import numpy as np

from networks.base import NetworkConfig, ParamSet, Trace, check_segments, record
from tensorcore.autodiff import Tensor, leaky_relu
from tensorcore.layers import conv2d, linear

CONV_WIDTHS = (1, 32, 64, 128)
FLAT_DIM = 128 * 16 * 2


class SiameseParams(ParamSet):

    def __init__(self, rng: np.random.Generator, cfg: NetworkConfig = NetworkConfig(), dtype=np.float32):
        super().__init__("S")
        self.leaky_slope = cfg.leaky_slope
        self.embedding_dim = cfg.embedding_dim
        for i, (c_in, c_out) in enumerate(zip(CONV_WIDTHS, CONV_WIDTHS[1:]), start=1):
            self.layer(f"conv{i}", (c_out, c_in, 3, 3), c_out, rng, cfg.init_std, dtype)
        self.layer("fc", (cfg.embedding_dim, FLAT_DIM), cfg.embedding_dim, rng, cfg.init_std, dtype)


def siamese_forward(s: Tensor, p: SiameseParams, trace: Trace = None) -> Tensor:
    """Embeddings of shape (N, embedding_dim)."""
    check_segments("S.input", s)
    x = s
    for i in range(1, len(CONV_WIDTHS)):
        x = leaky_relu(conv2d(x, p[f"conv{i}.w"], p[f"conv{i}.b"], stride=2, padding="same",
                              stage=f"S.conv{i}"), p.leaky_slope)
        record(trace, f"S.conv{i}", x)
    emb = linear(x.reshape(x.shape[0], -1), p["fc.w"], p["fc.b"], stage="S.fc")
    record(trace, "S.fc", emb)
    return emb
