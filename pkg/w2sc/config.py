"""
W2SC Run Configuration v1.0
One validated model for every tunable, read from flat ``key = value`` files.

    # comments and blank lines are allowed
    signal.n_fft = 1024
    losses.delta = 1.0
    train.lr_g = 0.0002

Keys are ``<section>.<field>``. Unknown sections, unknown fields and repeated
keys are rejected. ``to_lines`` echoes the effective configuration in the
same format, so an echo fed back reproduces the run.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from audio.signal_engine import SignalConfig
from evaluation.pitch import EvalConfig
from losses.loss_engine import LossWeights
from networks.base import N_MELS, NetworkConfig
from training.trainer import TrainConfig

SECTIONS = ("signal", "networks", "losses", "train", "eval")


class ConfigError(ValueError):
    """Malformed config line, unknown section or repeated key."""


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    signal: SignalConfig = Field(default_factory=SignalConfig)
    networks: NetworkConfig = Field(default_factory=NetworkConfig)
    losses: LossWeights = Field(default_factory=LossWeights)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @model_validator(mode="after")
    def _check_feature_width(self) -> "RunConfig":
        if self.signal.n_mels != N_MELS:
            raise ValueError(f"signal.n_mels must be {N_MELS} (network input height), got {self.signal.n_mels}")
        return self

    def to_lines(self) -> str:
        lines = []
        for section in SECTIONS:
            values = getattr(self, section).model_dump()
            for key, value in values.items():
                lines.append(f"{section}.{key} = {_format(value)}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, overrides: Dict[str, object]) -> "RunConfig":
        """Re-validate with dotted-key overrides (CLI flags such as ``--seed``)."""
        data = self.model_dump()
        for key, value in overrides.items():
            section, field = _split_key(key, 0)
            data[section][field] = value
        return RunConfig.model_validate(data)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _split_key(key: str, lineno: int) -> tuple:
    section, dot, field = key.partition(".")
    where = f"line {lineno}: " if lineno else ""
    if not dot or not field:
        raise ConfigError(f"{where}key {key!r} must look like <section>.<field>")
    if section not in SECTIONS:
        raise ConfigError(f"{where}unknown config section {section!r} (known: {', '.join(SECTIONS)})")
    return section, field


def parse_lines(lines: Iterable[str]) -> RunConfig:
    data: Dict[str, Dict[str, str]] = {s: {} for s in SECTIONS}
    seen = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = key.strip(), value.strip()
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        section, field = _split_key(key, lineno)
        data[section][field] = value
    return RunConfig.model_validate(data)


def parse_text(text: str) -> RunConfig:
    return parse_lines(text.splitlines())


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Dict[str, object]] = None) -> RunConfig:
    """Defaults, then the file at ``path`` (if given), then ``overrides``."""
    if path is None:
        cfg = RunConfig()
    else:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"Config file not found: {path}")
        cfg = parse_text(path.read_text(encoding="utf-8"))
    return cfg.with_overrides(overrides) if overrides else cfg


def config_keys() -> List[str]:
    return [line.split(" = ")[0] for line in RunConfig().to_lines().splitlines()]
