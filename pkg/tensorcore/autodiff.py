"""
W2SC Tensor Core v1.0
Minimal reverse-mode automatic differentiation over numpy arrays.

Every differentiable operation is a ``Function`` subclass with a ``forward`` on
raw arrays and a ``backward`` returning one gradient per parent. Applying a
function records it on the output tensor; ``backward(loss)`` orders the
recorded nodes into a ``Tape`` and walks it once in reverse.

Usage:
    from tensorcore.autodiff import Tensor, backward
    x = Tensor(np.ones(3), requires_grad=True)
    loss = (x * x).sum()
    backward(loss)          # x.grad == 2 * x.data
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]


class NonFiniteError(RuntimeError):
    """An operation produced NaN or infinity."""

    def __init__(self, op: str):
        super().__init__(f"{op} produced non-finite values")
        self.op = op


class TapeError(RuntimeError):
    """The tape was consumed, or backward was requested on a non-scalar."""


# ---------------------------------------------------------------------------
# Gradient mode
# ---------------------------------------------------------------------------

_mode = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_mode, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording. Thread-local, so concurrent forward passes are safe."""
    previous = is_grad_enabled()
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = previous


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------

class Tensor:

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 _ctx: Optional["Function"] = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._ctx = _ctx

    # -- introspection --------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Same values, cut from the tape."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # -- operators ------------------------------------------------------

    def _lift(self, other: Union["Tensor", ArrayLike]) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other): return Add.apply(self, self._lift(other))
    def __radd__(self, other): return Add.apply(self._lift(other), self)
    def __sub__(self, other): return Sub.apply(self, self._lift(other))
    def __rsub__(self, other): return Sub.apply(self._lift(other), self)
    def __mul__(self, other): return Mul.apply(self, self._lift(other))
    def __rmul__(self, other): return Mul.apply(self._lift(other), self)
    def __truediv__(self, other): return Div.apply(self, self._lift(other))
    def __rtruediv__(self, other): return Div.apply(self._lift(other), self)
    def __neg__(self): return Neg.apply(self)
    def __matmul__(self, other): return MatMul.apply(self, self._lift(other))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes or None)


# ---------------------------------------------------------------------------
# Function base and tape
# ---------------------------------------------------------------------------

class Function:
    """One recorded operation. Parents are the input tensors, in order."""

    def __init__(self, *parents: Tensor):
        self.parents = parents
        self.consumed = False

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        ctx = cls(*inputs)
        out = ctx.forward(*[t.data for t in inputs], **kwargs)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(cls.__name__)
        track = is_grad_enabled() and any(t.requires_grad for t in inputs)
        return Tensor(out, requires_grad=track, _ctx=ctx if track else None)

    def forward(self, *args, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError


class Tape:
    """Topologically ordered record of the operations reachable from a root."""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.parents:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf reachable from the scalar ``loss``.

    Leaf gradients accumulate additively until ``zero_grad``. The tape is
    consumed: a second call on the same graph raises ``TapeError``.
    """
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = Tape.record(loss)
    for node in tape.nodes:
        if node._ctx is not None and node._ctx.consumed:
            raise TapeError("backward called twice on the same tape without a new forward pass")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        ctx = node._ctx
        if ctx is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = ctx.backward(g)
        ctx.consumed = True
        for parent, pg in zip(ctx.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(g, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(-g, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return _unbroadcast(g * self.b, self.a.shape), _unbroadcast(g * self.a, self.b.shape)


class Div(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        ga = _unbroadcast(g / self.b, self.a.shape)
        gb = _unbroadcast(-g * self.a / (self.b * self.b), self.b.shape)
        return ga, gb


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class Abs(Function):
    def forward(self, a):
        self.sign = np.sign(a)
        return np.abs(a)

    def backward(self, g):
        return (g * self.sign,)


class Relu(Function):
    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, 0).astype(a.dtype)

    def backward(self, g):
        return (g * self.mask,)


class LeakyRelu(Function):
    def forward(self, a, slope=0.2):
        self.scale = np.where(a > 0, 1.0, slope).astype(a.dtype)
        return a * self.scale

    def backward(self, g):
        return (g * self.scale,)


class Tanh(Function):
    def forward(self, a):
        self.y = np.tanh(a)
        return self.y

    def backward(self, g):
        return (g * (1.0 - self.y * self.y),)


# ---------------------------------------------------------------------------
# Reductions and shape plumbing
# ---------------------------------------------------------------------------

class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.in_shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            axes = (self.axis,) if isinstance(self.axis, int) else tuple(self.axis)
            axes = sorted(a % len(self.in_shape) for a in axes)
            for a in axes:
                g = np.expand_dims(g, a)
        return (np.array(np.broadcast_to(g, self.in_shape)),)


class Norm(Function):
    """Euclidean norm along ``axis``; the gradient at a zero vector is zero."""

    def forward(self, a, axis=-1):
        self.a, self.axis = a, axis
        self.y = np.sqrt((a * a).sum(axis=axis, keepdims=True))
        return np.squeeze(self.y, axis=axis)

    def backward(self, g):
        safe = np.where(self.y > 0, self.y, 1.0)
        scale = np.where(self.y > 0, 1.0 / safe, 0.0).astype(self.a.dtype)
        return (np.expand_dims(g, self.axis) * self.a * scale,)


class Reshape(Function):
    def forward(self, a, shape=()):
        self.in_shape = a.shape
        return a.reshape(shape)

    def backward(self, g):
        return (g.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, a, axes=None):
        self.axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
        return np.transpose(a, self.axes)

    def backward(self, g):
        return (np.transpose(g, np.argsort(self.axes)),)


class Pad(Function):
    """Constant zero padding; ``pad_width`` as for ``np.pad``."""

    def forward(self, a, pad_width=()):
        self.slices = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.shape))
        return np.pad(a, pad_width)

    def backward(self, g):
        return (g[self.slices],)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, g):
        return tuple(np.split(g, self.splits, axis=self.axis))


class Take(Function):
    """Gather along ``axis``; repeated indices accumulate on the way back."""

    def forward(self, a, indices=None, axis=0):
        self.in_shape, self.indices, self.axis = a.shape, np.asarray(indices), axis
        return np.take(a, self.indices, axis=axis)

    def backward(self, g):
        out = np.zeros(self.in_shape, dtype=g.dtype)
        moved = np.moveaxis(out, self.axis, 0)
        np.add.at(moved, self.indices, np.moveaxis(g, self.axis, 0))
        return (out,)


class MatMul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, g):
        a, b = self.a, self.b
        a2 = a[None, :] if a.ndim == 1 else a
        b2 = b[:, None] if b.ndim == 1 else b
        g2 = g
        if a.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if b.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
        gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
        if a.ndim == 1:
            ga = ga.squeeze(-2)
        if b.ndim == 1:
            gb = gb.squeeze(-1)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


class Softmax(Function):
    def forward(self, a, axis=-1):
        self.axis = axis
        shifted = a - a.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.y = e / e.sum(axis=axis, keepdims=True)
        return self.y

    def backward(self, g):
        y = self.y
        return (y * (g - (g * y).sum(axis=self.axis, keepdims=True)),)


# ---------------------------------------------------------------------------
# Functional wrappers
# ---------------------------------------------------------------------------

def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    return LeakyRelu.apply(x, slope=slope)


def abs_(x: Tensor) -> Tensor:
    return Abs.apply(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Shift-invariant softmax; nonnegative and summing to one along ``axis``."""
    return Softmax.apply(x, axis=axis)


def pad(x: Tensor, pad_width: Sequence[Tuple[int, int]]) -> Tensor:
    return Pad.apply(x, pad_width=tuple(tuple(p) for p in pad_width))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate; ``axis=1`` is the channel axis of NCHW tensors."""
    return Concat.apply(*tensors, axis=axis)


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    return Take.apply(x, indices=indices, axis=axis)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def l1(x: Tensor, axis=None) -> Tensor:
    """Sum of absolute values."""
    return abs_(x).sum(axis=axis)


def l2(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``."""
    return Norm.apply(x, axis=axis)


def squared_l2(x: Tensor, axis=None) -> Tensor:
    return (x * x).sum(axis=axis)


def cosine_similarity(a: Tensor, b: Tensor, axis: int = -1,
                      eps: float = 1e-8) -> Tuple[Tensor, np.ndarray]:
    """Cosine of the angle between ``a`` and ``b`` along ``axis``.

    Returns ``(cosine, degenerate)``; rows where either norm is below ``eps``
    are flagged in the boolean mask and their cosine is exactly 0.
    """
    if a.shape != b.shape:
        raise ValueError(f"cosine_similarity: shape mismatch {a.shape} vs {b.shape}")
    dot = (a * b).sum(axis=axis)
    na, nb = l2(a, axis=axis), l2(b, axis=axis)
    degenerate = (na.data < eps) | (nb.data < eps)
    keep = (~degenerate).astype(a.dtype)
    denom = na * nb + Tensor(degenerate.astype(a.dtype))
    return dot / denom * Tensor(keep), degenerate


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------

def gradcheck(fn: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = 1e-5,
              samples: Optional[int] = None, rng: Optional[np.random.Generator] = None,
              floor: float = 1e-3) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``fn`` rebuilds the scalar loss from the current values of ``tensors``
    (float64). With ``samples`` set, only that many random coordinates per
    tensor are checked. Gradients smaller than ``floor`` are compared absolutely.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.zero_grad()
    backward(fn())
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if samples is not None and samples < flat.size:
            coords = rng.choice(flat.size, size=samples, replace=False)
        for i in coords:
            keep = flat[i]
            flat[i] = keep + step
            with no_grad():
                up = fn().item()
            flat[i] = keep - step
            with no_grad():
                down = fn().item()
            flat[i] = keep
            numeric = (up - down) / (2 * step)
            exact = analytic.reshape(-1)[i]
            scale = max(abs(numeric), abs(exact), floor)
            worst = max(worst, abs(numeric - exact) / scale)
    return worst
