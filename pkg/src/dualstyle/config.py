"""Experiment configuration: flat ``key = value`` files, canonical hashing.

The file format is plain text, one ``key = value`` per line, ``#`` comments.
Lists are comma separated; exclusivity groups use ``|`` within a group and
``;`` between groups (e.g. ``groups = 3|4|5;6|7``).  Unknown keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class ExperimentConfig:
    # data
    image_size: int = 32
    attr_names: list[str] = field(default_factory=lambda: ["bg_bright", "shape_square", "striped"])
    groups: list[list[int]] = field(default_factory=list)
    n_train: int = 4096
    n_test: int = 512
    # architecture
    noise_dim: int = 16
    code_downsample: int = 4
    code_channels: int = 64
    base_channels: int = 16
    map_hidden: int = 64
    spade_hidden: int = 16
    critic_channels: int = 16
    # loss weights
    lambda_cls: float = 1.0
    lambda_rec: float = 10.0
    lambda_sty: float = 1.0
    lambda_ms: float = 1.0
    lambda_ak: float = 1.0
    lambda_cyc: float = 1.0
    lambda_gp: float = 10.0
    # optimization
    lr_net: float = 1e-4
    lr_noise: float = 1e-3
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 8
    steps: int = 20000
    seed: int = 0
    # sampling protocol
    p_flip: float = 0.5
    single_attribute_edits: bool = False
    ak_on_reference: bool = False
    # run outputs
    out_dir: str = "runs/default"
    checkpoint_every: int = 5000
    sample_every: int = 5000

    @property
    def n_attrs(self) -> int:
        return len(self.attr_names)

    def validate(self) -> None:
        if self.image_size < 8 or self.image_size % self.code_downsample != 0:
            raise ConfigError(f"image_size {self.image_size} must be a multiple of code_downsample {self.code_downsample}")
        code_hw = self.image_size // self.code_downsample
        if code_hw < 2:
            raise ConfigError("style-code spatial size must be at least 2")
        if self.n_attrs < 1:
            raise ConfigError("at least one attribute is required")
        for g in self.groups:
            if any(i < 0 or i >= self.n_attrs for i in g):
                raise ConfigError(f"group index out of range in {g}")
        for name in ("lambda_cls", "lambda_rec", "lambda_sty", "lambda_ms",
                     "lambda_ak", "lambda_cyc", "lambda_gp"):
            v = getattr(self, name)
            if not (v >= 0.0 and v == v):
                raise ConfigError(f"{name} must be a finite non-negative real, got {v}")
        if not 0.0 < self.p_flip <= 1.0:
            raise ConfigError(f"p_flip must be in (0,1], got {self.p_flip}")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be >= 1 and steps >= 0")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must be >= 1")

    # -- serialization ----------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        cfg = cls()
        known = {f.name: f for f in dataclasses.fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            setattr(cfg, key, _parse_value(key, value, getattr(cfg, key)))
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        return cls.from_text(p.read_text())


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        if value and isinstance(value[0], list):
            return ";".join("|".join(str(i) for i in g) for g in value)
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_value(key: str, value: str, default):
    try:
        if key == "groups":
            if not value:
                return []
            return [[int(i) for i in part.split("|")] for part in value.split(";") if part]
        if key == "attr_names":
            names = [v.strip() for v in value.split(",") if v.strip()]
            if not names:
                raise ValueError("empty attribute list")
            return names
        if isinstance(default, bool):
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        return value
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from exc
