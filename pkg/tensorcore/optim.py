"""
W2SC Optimizer v1.0
Adam with bias-corrected moments.

``adam_step`` is the pure update on arrays; ``Adam`` binds it to a list of
Parameters and keeps the ``AdamState`` that checkpoints persist.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from tensorcore.layers import Parameter

# ── Defaults ───────────────────────────────────────
BETA1 = 0.5
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    """First/second moments keyed by parameter name, plus the shared step count."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPS

    def ensure(self, params: Sequence[Parameter]) -> None:
        for p in params:
            if p.name not in self.m:
                self.m[p.name] = np.zeros_like(p.data)
                self.v[p.name] = np.zeros_like(p.data)
            elif self.m[p.name].shape != p.shape:
                raise ValueError(
                    f"Adam moment shape {self.m[p.name].shape} does not match parameter "
                    f"{p.name} {p.shape}"
                )


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              m: Sequence[np.ndarray], v: Sequence[np.ndarray], t: int, lr: float,
              beta1: float = BETA1, beta2: float = BETA2,
              eps: float = EPS) -> tuple[List[np.ndarray], List[np.ndarray], List[np.ndarray]]:
    """One Adam update at step ``t`` (1-based). Returns new (params, m, v); inputs are untouched."""
    new_p, new_m, new_v = [], [], []
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, mi, vi in zip(params, grads, m, v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        mi = beta1 * mi + (1.0 - beta1) * g
        vi = beta2 * vi + (1.0 - beta2) * g * g
        step = lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
        new_p.append((p - step).astype(p.dtype))
        new_m.append(mi.astype(p.dtype))
        new_v.append(vi.astype(p.dtype))
    return new_p, new_m, new_v


class Adam:
    """Adam over a fixed parameter list. Missing gradients count as zero."""

    def __init__(self, params: Sequence[Parameter], lr: float, beta1: float = BETA1,
                 beta2: float = BETA2, eps: float = EPS, state: AdamState | None = None):
        self.params = list(params)
        self.lr = lr
        self.state = state or AdamState(beta1=beta1, beta2=beta2, eps=eps)
        self.state.ensure(self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        s = self.state
        s.t += 1
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new_p, new_m, new_v = adam_step(
            [p.data for p in self.params], grads,
            [s.m[p.name] for p in self.params], [s.v[p.name] for p in self.params],
            s.t, self.lr, s.beta1, s.beta2, s.eps,
        )
        for p, data, mi, vi in zip(self.params, new_p, new_m, new_v):
            p.data = data
            s.m[p.name] = mi
            s.v[p.name] = vi
