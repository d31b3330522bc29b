"""
W2SC Layers v1.0
Parameters, 2-D convolution and its transpose, fully connected maps and
spectral normalization, all built on the tensor core.

Convolutions use NCHW tensors and (out, in, kh, kw) weights. The transposed
convolution shares the weight layout of the convolution it inverts, so it is
the exact adjoint of ``conv2d`` with the same geometry.
"""

from __future__ import annotations

import math
import zlib
from typing import Dict, Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from tensorcore.autodiff import Function, Tensor

Pair = Tuple[int, int]

# ── Defaults ───────────────────────────────────────
INIT_STD = 0.02
SN_POWER_ITERS = 1
SN_WARMUP_ITERS = 100
SN_EPS = 1e-12


class ShapeError(ValueError):
    """A tensor reached a stage with the wrong shape."""

    def __init__(self, stage: str, detail: str):
        super().__init__(f"{stage}: {detail}")
        self.stage = stage


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

class Parameter(Tensor):
    """A named, trainable tensor.

    ``spectral_state`` holds the persisted power-iteration vectors ``u`` and
    ``v`` once the parameter has been spectrally normalized.
    """

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.spectral_state: Optional[Dict[str, np.ndarray]] = None
        self.sn_degenerate = False

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def normal_init(name: str, shape: Tuple[int, ...], rng: np.random.Generator,
                std: float = INIT_STD, dtype=np.float32) -> Parameter:
    return Parameter(rng.normal(0.0, std, size=shape).astype(dtype), name)


def zeros_init(name: str, shape: Tuple[int, ...], dtype=np.float32) -> Parameter:
    return Parameter(np.zeros(shape, dtype=dtype), name)


# ---------------------------------------------------------------------------
# Convolution geometry
# ---------------------------------------------------------------------------

def _pair(value: Union[int, Pair]) -> Pair:
    return (value, value) if isinstance(value, int) else (int(value[0]), int(value[1]))


def same_padding(size: int, kernel: int, stride: int) -> Tuple[int, int, int]:
    """(out, pad_before, pad_after) for "same" padding along one axis.

    The output is ceil(size / stride); an odd total pad puts the extra zero
    on the trailing side.
    """
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def conv_output_shape(in_hw: Pair, kernel: Pair, stride: Pair, padding: str) -> Tuple[Pair, Tuple[Pair, Pair]]:
    """Output spatial size and per-axis (before, after) zero padding."""
    out, pads = [], []
    for n, k, s in zip(in_hw, kernel, stride):
        if padding == "same":
            o, lo, hi = same_padding(n, k, s)
        elif padding == "valid":
            o, lo, hi = (n - k) // s + 1, 0, 0
        else:
            raise ValueError(f"Unknown padding mode: {padding!r}")
        out.append(o)
        pads.append((lo, hi))
    return (out[0], out[1]), (pads[0], pads[1])


def _im2col(xp: np.ndarray, kernel: Pair, stride: Pair) -> np.ndarray:
    """(N, C, Hp, Wp) → (N, C, Ho, Wo, kh, kw) strided window view."""
    windows = sliding_window_view(xp, kernel, axis=(2, 3))
    return windows[:, :, ::stride[0], ::stride[1]]


def _col2im(dcols: np.ndarray, padded_shape: Tuple[int, ...], stride: Pair) -> np.ndarray:
    """Scatter-add (N, Ho, Wo, C, kh, kw) window gradients into a padded image."""
    n, ho, wo, c, kh, kw = dcols.shape
    sh, sw = stride
    out = np.zeros(padded_shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


def _crop(xp: np.ndarray, pads: Tuple[Pair, Pair]) -> np.ndarray:
    (t, b), (l, r) = pads
    return xp[:, :, t:xp.shape[2] - b, l:xp.shape[3] - r]


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: Pair,
                  pads: Tuple[Pair, Pair]) -> Tuple[np.ndarray, np.ndarray, Tuple[int, ...]]:
    xp = np.pad(x, ((0, 0), (0, 0), pads[0], pads[1]))
    cols = _im2col(xp, w.shape[2:], stride)
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols, xp.shape


def _conv_input_grad(g: np.ndarray, w: np.ndarray, stride: Pair, padded_shape,
                     pads: Tuple[Pair, Pair]) -> np.ndarray:
    # (N, O, Ho, Wo) x (O, C, kh, kw) → (N, Ho, Wo, C, kh, kw)
    dcols = np.tensordot(g.transpose(0, 2, 3, 1), w, axes=([3], [0]))
    return _crop(_col2im(dcols, padded_shape, stride), pads)


def _weight_grad(g: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))


class Conv2d(Function):
    def forward(self, x, w, stride=(1, 1), pads=((0, 0), (0, 0))):
        self.w, self.stride, self.pads = w, stride, pads
        out, self.cols, self.padded_shape = _conv_forward(x, w, stride, pads)
        return out

    def backward(self, g):
        gx = _conv_input_grad(g, self.w, self.stride, self.padded_shape, self.pads)
        return gx, _weight_grad(g, self.cols).astype(self.w.dtype)


class Conv2dTranspose(Function):
    """Adjoint of ``Conv2d``: maps a conv output ``y`` back onto an ``out_hw`` image."""

    def forward(self, y, w, stride=(1, 1), pads=((0, 0), (0, 0)), out_hw=(1, 1)):
        self.y, self.w, self.stride, self.pads = y, w, stride, pads
        padded_shape = (y.shape[0], w.shape[1], out_hw[0] + sum(pads[0]), out_hw[1] + sum(pads[1]))
        return _conv_input_grad(y, w, stride, padded_shape, pads)

    def backward(self, g):
        gy, cols, _ = _conv_forward(g, self.w, self.stride, self.pads)
        return gy, _weight_grad(self.y, cols).astype(self.w.dtype)


def _check_channels(stage: str, x: Tensor, expected: int) -> None:
    if x.ndim != 4:
        raise ShapeError(stage, f"expected NCHW input, got shape {x.shape}")
    if x.shape[1] != expected:
        raise ShapeError(stage, f"expected {expected} input channels, got {x.shape[1]}")


def _add_bias(out: Tensor, b: Optional[Tensor]) -> Tensor:
    return out if b is None else out + b.reshape(1, -1, 1, 1)


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: Union[int, Pair] = 1,
           padding: str = "valid", stage: str = "conv2d") -> Tensor:
    """2-D cross-correlation of an NCHW batch with (out, in, kh, kw) weights.

    ``valid``: out = floor((in - k) / s) + 1 per axis. ``same``: out = ceil(in / s).
    """
    stride = _pair(stride)
    _check_channels(stage, x, w.shape[1])
    (ho, wo), pads = conv_output_shape(x.shape[2:], w.shape[2:], stride, padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(stage, f"kernel {w.shape[2:]} leaves no output on input {x.shape[2:]}")
    out = Conv2d.apply(x, w, stride=stride, pads=pads)
    return _add_bias(out, b)


def conv2d_transpose(y: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: Union[int, Pair] = 1,
                     padding: str = "valid", stage: str = "conv2d_transpose") -> Tensor:
    """Transposed convolution; ``w`` is (in, out, kh, kw) as seen from ``y``.

    ``same``: out = in * s per axis. ``valid``: out = (in - 1) * s + k.
    """
    stride = _pair(stride)
    _check_channels(stage, y, w.shape[0])
    kh, kw = w.shape[2:]
    if padding == "same":
        out_hw = (y.shape[2] * stride[0], y.shape[3] * stride[1])
    elif padding == "valid":
        out_hw = ((y.shape[2] - 1) * stride[0] + kh, (y.shape[3] - 1) * stride[1] + kw)
    else:
        raise ValueError(f"Unknown padding mode: {padding!r}")
    fwd_hw, pads = conv_output_shape(out_hw, (kh, kw), stride, padding)
    if fwd_hw != tuple(y.shape[2:]):
        raise ShapeError(stage, f"input {y.shape[2:]} is not a {padding} conv output of {out_hw}")
    out = Conv2dTranspose.apply(y, w, stride=stride, pads=pads, out_hw=out_hw)
    return _add_bias(out, b)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stage: str = "linear") -> Tensor:
    """Fully connected map of (N, in) rows with (out, in) weights."""
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(stage, f"expected (N, {w.shape[1]}) input, got {x.shape}")
    out = x @ w.transpose()
    return out if b is None else out + b


# ---------------------------------------------------------------------------
# Spectral normalization
# ---------------------------------------------------------------------------

def _unit(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec)
    return vec / norm if norm > SN_EPS else vec


def spectral_normalize(w: Parameter, power_iters: int = SN_POWER_ITERS,
                       warmup_iters: int = SN_WARMUP_ITERS, update: bool = True) -> Tensor:
    """``w / sigma`` with sigma the top singular value of ``w`` as (out, rest).

    sigma is estimated by power iteration from the persisted ``u``/``v``; a
    fresh parameter first runs ``warmup_iters`` extra iterations. With
    ``update`` off the stored vectors are left alone. Gradients flow through
    the division with ``u`` and ``v`` held constant. A zero matrix returns
    ``w`` unchanged and sets ``w.sn_degenerate``.
    """
    mat = w.data.reshape(w.shape[0], -1).astype(np.float64)
    state = w.spectral_state
    if state is None:
        rng = np.random.default_rng(zlib.crc32(w.name.encode("utf-8")))
        u = _unit(rng.normal(size=mat.shape[0]))
        iters = power_iters + warmup_iters
    else:
        u = state["u"].astype(np.float64)
        iters = power_iters
    v = _unit(mat.T @ u)
    for _ in range(iters):
        v = _unit(mat.T @ u)
        u = _unit(mat @ v)

    sigma_est = float(u @ mat @ v)
    w.sn_degenerate = abs(sigma_est) < SN_EPS
    if update:
        w.spectral_state = {"u": u.astype(w.dtype), "v": v.astype(w.dtype)}
    if w.sn_degenerate:
        return w
    outer = Tensor(np.outer(u, v).reshape(w.shape).astype(w.dtype))
    sigma = (w * outer).sum()
    return w / sigma
