"""Experiment configuration and its INI-style file format.

Files use ``[model]``, ``[loss]``, ``[train]`` and ``[data]`` sections with
one ``key = value`` per line. Overrides may name a key bare (``lr``) or with
its section prefix (``train.lr``). Unknown keys are errors.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from uegan.generator import VARIANTS, GeneratorConfig
from uegan.losses import LossWeights


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    # model
    variant: str = "full"
    base_channels: int = 32
    disc_channels: int = 64
    # loss
    lambda_qua: float = 0.05
    lambda_fid: float = 1.0
    lambda_idt: float = 0.1
    fidelity_squared: bool = True
    vgg_weights: str = ""
    vgg_sha256: str = ""
    # train
    epochs: int = 150
    decay_start: int = 75
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 10
    steps_per_epoch: int = 0
    seed: int = 0
    deterministic: bool = True
    out_dir: str = "runs/uegan"
    # data
    data_root: str = "data"
    manifest: str = ""
    crop: int = 256
    long_side: int = 512
    flip: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0 <= self.decay_start <= self.epochs:
            raise ConfigError(f"decay_start must lie in [0, epochs], got {self.decay_start} with epochs={self.epochs}")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.steps_per_epoch < 0:
            raise ConfigError("steps_per_epoch must be >= 0 (0 derives it from the pool size)")
        try:
            self.weights
        except ValueError as e:
            raise ConfigError(str(e)) from e

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_qua, self.lambda_fid, self.lambda_idt)

    @property
    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(base_channels=self.base_channels, variant=self.variant)

    def hash(self) -> str:
        """Digest of everything that affects the trained weights."""
        d = asdict(self)
        for k in ("out_dir", "data_root", "manifest", "vgg_weights"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


SECTIONS = {
    "model": ("variant", "base_channels", "disc_channels"),
    "loss": ("lambda_qua", "lambda_fid", "lambda_idt", "fidelity_squared", "vgg_weights", "vgg_sha256"),
    "train": ("epochs", "decay_start", "lr", "beta1", "beta2", "batch_size", "steps_per_epoch", "seed",
              "deterministic", "out_dir"),
    "data": ("data_root", "manifest", "crop", "long_side", "flip"),
}
_SECTION_OF = {key: section for section, keys in SECTIONS.items() for key in keys}
_DEFAULTS = TrainConfig()


def _parse_value(key: str, text: str):
    default = getattr(_DEFAULTS, key)
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r} (expected {type(default).__name__})") from None
    return text


def _resolve_key(name: str) -> str:
    name = name.strip().replace("-", "_")
    if "." in name:
        section, key = name.split(".", 1)
        if _SECTION_OF.get(key) != section:
            raise ConfigError(f"unknown config key: {name}")
        return key
    if name not in _SECTION_OF:
        raise ConfigError(f"unknown config key: {name}")
    return name


def parse_overrides(items: Iterable[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        name, value = item.split("=", 1)
        key = _resolve_key(name)
        out[key] = _parse_value(key, value)
    return out


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> TrainConfig:
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as f:
                parser.read_file(f)
        except (OSError, configparser.Error) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section: [{section}]")
            for key, value in parser.items(section):
                resolved = _resolve_key(f"{section}.{key}")
                values[resolved] = _parse_value(resolved, value)
    values.update(parse_overrides(overrides))
    return TrainConfig(**values)


def save_config(config: TrainConfig, path: str | Path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    d = config.to_dict()
    for section, keys in SECTIONS.items():
        parser[section] = {k: str(d[k]) for k in keys}
    with open(path, "w") as f:
        f.write(f"# config hash: {config.hash()}\n")
        parser.write(f)


def with_overrides(config: TrainConfig, **changes) -> TrainConfig:
    return replace(config, **changes)
