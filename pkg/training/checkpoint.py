"""
W2SC Checkpoint v1.0
Binary training-state snapshots.

Layout (little-endian):

    b"W2SC-CKPT"  u32 version  u64 step  u32 count
    count x { u16 name_len, name (UTF-8), u8 rank, rank x u32 dim, f32 data }
    u32 CRC32 of everything before it

Tensor names:
    G.* / D.* / S.*             network parameters
    opt.<G|D|S>.m.<param>       Adam first moment
    opt.<G|D|S>.v.<param>       Adam second moment
    opt.<G|D|S>.t               Adam step count, shape (1,)
    sn.<param>.u / sn.<param>.v spectral-norm power-iteration vectors

Every checkpoint gets a JSON sidecar ``<path>.json`` with the config echo and
the per-domain normalization statistics that ``convert`` needs.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from losses.loss_engine import LossWeights
from networks.base import NetworkConfig
from training.trainer import TrainConfig, TrainState, init_train_state
from w2sc_utils import atomic_save, atomic_write_bytes, load_json

MAGIC = b"W2SC-CKPT"
VERSION = 1
_HEADER = struct.Struct("<IQI")
_CRC = struct.Struct("<I")
OPTIMIZERS = ("G", "D", "S")


class CorruptCheckpointError(ValueError):
    """Truncated file, bad magic or CRC mismatch."""


class CheckpointVersionError(ValueError):
    pass


class UnknownTensorError(ValueError):
    def __init__(self, name: str):
        super().__init__(f"Unknown tensor in checkpoint: {name}")
        self.name = name


# ---------------------------------------------------------------------------
# Codec
# ---------------------------------------------------------------------------

def encode_checkpoint(step: int, tensors: Dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, _HEADER.pack(VERSION, step, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


class _Reader:

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError(f"Checkpoint truncated at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Tuple[int, Dict[str, np.ndarray]]:
    if not data.startswith(MAGIC):
        raise CorruptCheckpointError("Not a W2SC checkpoint (bad magic)")
    if len(data) < len(MAGIC) + _HEADER.size + _CRC.size:
        raise CorruptCheckpointError("Checkpoint truncated in header")
    body, trailer = data[:-_CRC.size], data[-_CRC.size:]
    if zlib.crc32(body) != _CRC.unpack(trailer)[0]:
        raise CorruptCheckpointError("Checkpoint CRC mismatch (truncated or damaged file)")

    reader = _Reader(body)
    reader.take(len(MAGIC))
    version, step, count = reader.unpack(_HEADER.format)
    if version != VERSION:
        raise CheckpointVersionError(f"Checkpoint version {version}, this build reads {VERSION}")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I")
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape)
        if name in tensors:
            raise CorruptCheckpointError(f"Duplicate tensor name in checkpoint: {name}")
        tensors[name] = arr.astype(np.float32)
    if reader.pos != len(body):
        raise CorruptCheckpointError(f"{len(body) - reader.pos} trailing bytes after last tensor")
    return step, tensors


# ---------------------------------------------------------------------------
# State <-> named tensors
# ---------------------------------------------------------------------------

def _optimizers(state: TrainState):
    return zip(OPTIMIZERS, (state.opt_g, state.opt_d, state.opt_s))


def state_tensors(state: TrainState) -> Dict[str, np.ndarray]:
    tensors: Dict[str, np.ndarray] = {}
    for pset in (state.g, state.d, state.s):
        for p in pset:
            tensors[p.name] = p.data
    for tag, opt in _optimizers(state):
        for p in opt.params:
            tensors[f"opt.{tag}.m.{p.name}"] = opt.state.m[p.name]
            tensors[f"opt.{tag}.v.{p.name}"] = opt.state.v[p.name]
        tensors[f"opt.{tag}.t"] = np.array([opt.state.t], dtype=np.float32)
    for w in state.d.normalized_weights():
        if w.spectral_state is not None:
            tensors[f"sn.{w.name}.u"] = w.spectral_state["u"]
            tensors[f"sn.{w.name}.v"] = w.spectral_state["v"]
    return tensors


def _shape_checked(name: str, arr: np.ndarray, expected: Tuple[int, ...]) -> np.ndarray:
    if arr.shape != tuple(expected):
        raise ValueError(f"Checkpoint/config shape mismatch for {name}: file {arr.shape}, config {tuple(expected)}")
    return arr.copy()


def restore_state(state: TrainState, step: int, tensors: Dict[str, np.ndarray]) -> TrainState:
    """Load named tensors into ``state`` in place. Every parameter and moment must be present."""
    params = {p.name: p for pset in (state.g, state.d, state.s) for p in pset}
    opts = dict(_optimizers(state))
    sn_targets = {w.name: w for w in state.d.normalized_weights()}
    sn_loaded: Dict[str, Dict[str, np.ndarray]] = {}
    seen = set()

    for name, arr in tensors.items():
        if name in params:
            params[name].data = _shape_checked(name, arr, params[name].shape)
        elif name.startswith("opt."):
            _, tag, rest = name.split(".", 2)
            if tag not in opts:
                raise UnknownTensorError(name)
            opt = opts[tag]
            if rest == "t":
                opt.state.t = int(arr.reshape(-1)[0])
            else:
                kind, _, pname = rest.partition(".")
                if kind not in ("m", "v") or pname not in opt.state.m:
                    raise UnknownTensorError(name)
                moments = opt.state.m if kind == "m" else opt.state.v
                moments[pname] = _shape_checked(name, arr, moments[pname].shape)
        elif name.startswith("sn."):
            pname, _, kind = name[3:].rpartition(".")
            if pname not in sn_targets or kind not in ("u", "v"):
                raise UnknownTensorError(name)
            sn_loaded.setdefault(pname, {})[kind] = arr.copy()
        else:
            raise UnknownTensorError(name)
        seen.add(name)

    missing = [n for n in state_tensors_names(state) if n not in seen]
    if missing:
        raise CorruptCheckpointError(f"Checkpoint lacks {len(missing)} tensors, first: {missing[0]}")
    for pname, vecs in sn_loaded.items():
        if set(vecs) != {"u", "v"}:
            raise CorruptCheckpointError(f"Spectral state for {pname} is incomplete")
        sn_targets[pname].spectral_state = vecs
    state.step = step
    return state


def state_tensors_names(state: TrainState) -> List[str]:
    """Names a complete checkpoint must carry; spectral vectors are optional."""
    names = [p.name for pset in (state.g, state.d, state.s) for p in pset]
    for tag, opt in _optimizers(state):
        names += [f"opt.{tag}.{kind}.{p.name}" for p in opt.params for kind in ("m", "v")]
        names.append(f"opt.{tag}.t")
    return names


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def checkpoint_name(step: int) -> str:
    return f"ckpt_{step:06d}.w2sc"


def save_checkpoint(state: TrainState, path: Union[str, Path], config_echo: str = "",
                    norm_stats: Optional[Dict[str, dict]] = None) -> Path:
    path = Path(path)
    atomic_write_bytes(encode_checkpoint(state.step, state_tensors(state)), path)
    atomic_save({
        "step": state.step,
        "config": config_echo,
        "norm_stats": norm_stats or {},
    }, sidecar_path(path))
    return path


def load_checkpoint(path: Union[str, Path], cfg: TrainConfig = TrainConfig(),
                    weights: LossWeights = LossWeights(),
                    net_cfg: NetworkConfig = NetworkConfig()) -> TrainState:
    """Rebuild the training state saved at ``path`` on networks shaped by ``net_cfg``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    step, tensors = decode_checkpoint(path.read_bytes())
    return restore_state(init_train_state(cfg, weights, net_cfg), step, tensors)


def load_sidecar(path: Union[str, Path]) -> dict:
    side = sidecar_path(path)
    if not side.is_file():
        raise FileNotFoundError(f"Checkpoint sidecar not found: {side}")
    return load_json(side)
