"""
W2SC Network Base v1.0
Shared configuration, named parameter sets and shape tracing for the
generator, discriminator and Siamese encoder.
"""

from __future__ import annotations

from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from tensorcore.autodiff import Tensor
from tensorcore.layers import INIT_STD, SN_POWER_ITERS, SN_WARMUP_ITERS, Parameter, ShapeError, normal_init, zeros_init

# ── Segment geometry ───────────────────────────────
N_MELS = 128
SEGMENT_FRAMES = 12

# ── Network defaults ───────────────────────────────
LEAKY_SLOPE = 0.2
EMBEDDING_DIM = 128

Trace = Optional[List[Tuple[str, Tuple[int, ...]]]]


class NetworkConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    leaky_slope: float = Field(LEAKY_SLOPE, ge=0, lt=1)
    init_std: float = Field(INIT_STD, gt=0)
    sn_power_iters: int = Field(SN_POWER_ITERS, ge=1)
    sn_warmup_iters: int = Field(SN_WARMUP_ITERS, ge=0)
    embedding_dim: int = Field(EMBEDDING_DIM, ge=1)


class ParamSet:
    """Ordered, named parameters of one network. Names carry the network prefix (``G.``, ``D.``, ``S.``)."""

    def __init__(self, prefix: str):
        self.prefix = prefix
        self._params: Dict[str, Parameter] = {}

    def _add(self, param: Parameter) -> Parameter:
        if param.name in self._params:
            raise ValueError(f"Duplicate parameter name: {param.name}")
        self._params[param.name] = param
        return param

    def layer(self, name: str, shape: Tuple[int, ...], out_channels: int, rng: np.random.Generator,
              std: float, dtype=np.float32) -> None:
        """Normal weight ``<prefix>.<name>.w`` plus zero bias ``<prefix>.<name>.b``."""
        self._add(normal_init(f"{self.prefix}.{name}.w", shape, rng, std, dtype))
        self._add(zeros_init(f"{self.prefix}.{name}.b", (out_channels,), dtype))

    def scalar(self, name: str, value: float = 0.0, dtype=np.float32) -> None:
        self._add(Parameter(np.full((1,), value, dtype=dtype), f"{self.prefix}.{name}"))

    def __getitem__(self, local: str) -> Parameter:
        return self._params[f"{self.prefix}.{local}"]

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def parameters(self) -> List[Parameter]:
        return list(self._params.values())

    def named(self) -> Dict[str, Parameter]:
        return dict(self._params)

    def astype(self, dtype) -> "ParamSet":
        """Cast every parameter in place (gradient checks run in float64)."""
        for p in self._params.values():
            p.data = p.data.astype(dtype)
        return self


def record(trace: Trace, stage: str, t: Tensor) -> None:
    """Append the per-sample shape of ``t``: (H, W, C) for NCHW, else the trailing dims."""
    if trace is None:
        return
    if t.ndim == 4:
        trace.append((stage, (t.shape[2], t.shape[3], t.shape[1])))
    else:
        trace.append((stage, tuple(t.shape[1:])))


def expect(stage: str, t: Tensor, shape: Tuple[int, ...]) -> Tensor:
    """Hard shape check on everything but the batch axis."""
    if tuple(t.shape[1:]) != tuple(shape):
        raise ShapeError(stage, f"expected per-sample shape {shape}, got {tuple(t.shape[1:])}")
    return t


def check_segments(stage: str, x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(stage, f"expected (N, 1, {N_MELS}, {SEGMENT_FRAMES}) segments, got {x.shape}")
    return expect(stage, x, (1, N_MELS, SEGMENT_FRAMES))
