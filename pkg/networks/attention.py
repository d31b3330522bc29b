"""
W2SC Self-Attention v1.0
Position-by-position attention over the 128 x 12 grid of the first encoder
layer. Every one of the 1536 locations attends to all others:

    f = W_f x, g = W_g x            (64 → 16 channels, 1x1)
    beta = softmax(f^T g)           (1536 x 1536, normalized over keys)
    h = W_h x                       (64 → 128 channels, 1x1)
    o = W_o reshape(beta h)         (128 → 64 channels, 1x1)
    out = x + gamma * o             (gamma starts at 0)
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from networks.base import N_MELS, SEGMENT_FRAMES, NetworkConfig, ParamSet, Trace, expect, record
from tensorcore.autodiff import Function, Tensor, matmul, softmax
from tensorcore.layers import ShapeError, conv2d

CHANNELS = 64
KEY_CHANNELS = 16
VALUE_CHANNELS = 128
POSITIONS = N_MELS * SEGMENT_FRAMES


class AttentionParams(ParamSet):
    """W_f, W_g (64→16), W_h (64→128), W_o (128→64), all 1x1, and the gate gamma."""

    def __init__(self, rng: np.random.Generator, cfg: NetworkConfig = NetworkConfig(),
                 prefix: str = "G.attn", dtype=np.float32):
        super().__init__(prefix)
        std = cfg.init_std
        self.layer("f", (KEY_CHANNELS, CHANNELS, 1, 1), KEY_CHANNELS, rng, std, dtype)
        self.layer("g", (KEY_CHANNELS, CHANNELS, 1, 1), KEY_CHANNELS, rng, std, dtype)
        self.layer("h", (VALUE_CHANNELS, CHANNELS, 1, 1), VALUE_CHANNELS, rng, std, dtype)
        self.layer("o", (CHANNELS, VALUE_CHANNELS, 1, 1), CHANNELS, rng, std, dtype)
        self.scalar("gamma", 0.0, dtype)


class FusedAttention(Function):
    """softmax(f g) h in one op; only beta is kept for the backward pass.

    Inputs are f (N, P, K), g (N, K, P) and h (N, P, V). The scores buffer is
    turned into beta in place and released once the gradient has been taken.
    """

    def forward(self, f, g, h):
        beta = np.matmul(f, g)
        beta -= beta.max(axis=-1, keepdims=True)
        np.exp(beta, out=beta)
        beta /= beta.sum(axis=-1, keepdims=True)
        self.f, self.g, self.h, self.beta = f, g, h, beta
        return np.matmul(beta, h)

    def backward(self, grad):
        beta = self.beta
        grad_h = np.matmul(np.swapaxes(beta, -1, -2), grad)
        scores = np.matmul(grad, np.swapaxes(self.h, -1, -2))
        scores -= np.einsum("npq,npq->np", scores, beta)[..., None]
        scores *= beta
        grad_f = np.matmul(scores, np.swapaxes(self.g, -1, -2))
        grad_g = np.matmul(np.swapaxes(self.f, -1, -2), scores)
        self.beta = None
        return grad_f, grad_g, grad_h


def _conv1x1(x: Tensor, p: AttentionParams, name: str, stage: str) -> Tensor:
    return conv2d(x, p[f"{name}.w"], p[f"{name}.b"], stage=stage)


def attention_map(x: Tensor, p: AttentionParams, trace: Trace = None) -> Tensor:
    """beta: (N, 1536, 1536), each row a distribution over key positions."""
    n = x.shape[0]
    f = _conv1x1(x, p, "f", "attn.conv_f")
    record(trace, "attn.conv_f", f)
    g = _conv1x1(x, p, "g", "attn.conv_g")
    record(trace, "attn.conv_g", g)
    f_rows = f.reshape(n, KEY_CHANNELS, POSITIONS).transpose(0, 2, 1)
    g_cols = g.reshape(n, KEY_CHANNELS, POSITIONS)
    scores = matmul(f_rows, g_cols)
    record(trace, "attn.matmul_fg", scores)
    beta = softmax(scores, axis=-1)
    record(trace, "attn.softmax", beta)
    return beta


def attention_forward(x: Tensor, p: AttentionParams, trace: Trace = None,
                      beta_out: Optional[list] = None) -> Tensor:
    """Residual self-attention on an (N, 64, 128, 12) activation.

    ``beta_out``, when given, receives the attention map tensor. Without a
    trace or ``beta_out`` the map is never materialized as a tensor and the
    fused op runs instead.
    """
    if x.ndim != 4:
        raise ShapeError("attention", f"expected NCHW input, got {x.shape}")
    expect("attention", x, (CHANNELS, N_MELS, SEGMENT_FRAMES))
    n = x.shape[0]
    if trace is None and beta_out is None:
        return _fused_forward(x, p)
    beta = attention_map(x, p, trace)
    if beta_out is not None:
        beta_out.append(beta)
    h = _conv1x1(x, p, "h", "attn.conv_h")
    record(trace, "attn.conv_h", h)
    h_rows = h.reshape(n, VALUE_CHANNELS, POSITIONS).transpose(0, 2, 1)
    attended = matmul(beta, h_rows)
    record(trace, "attn.matmul_beta_h", attended)
    grid = attended.transpose(0, 2, 1).reshape(n, VALUE_CHANNELS, N_MELS, SEGMENT_FRAMES)
    record(trace, "attn.reshape", grid)
    o = _conv1x1(grid, p, "o", "attn.conv_o")
    record(trace, "attn.conv_o", o)
    return x + p["gamma"].reshape(1, 1, 1, 1) * o


def _fused_forward(x: Tensor, p: AttentionParams) -> Tensor:
    n = x.shape[0]
    f_rows = _conv1x1(x, p, "f", "attn.conv_f").reshape(n, KEY_CHANNELS, POSITIONS).transpose(0, 2, 1)
    g_cols = _conv1x1(x, p, "g", "attn.conv_g").reshape(n, KEY_CHANNELS, POSITIONS)
    h_rows = _conv1x1(x, p, "h", "attn.conv_h").reshape(n, VALUE_CHANNELS, POSITIONS).transpose(0, 2, 1)
    attended = FusedAttention.apply(f_rows, g_cols, h_rows)
    grid = attended.transpose(0, 2, 1).reshape(n, VALUE_CHANNELS, N_MELS, SEGMENT_FRAMES)
    o = _conv1x1(grid, p, "o", "attn.conv_o")
    return x + p["gamma"].reshape(1, 1, 1, 1) * o
