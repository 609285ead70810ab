"""Run configuration: INI-style file with sectioned namespaces plus
command-line overrides.

Sections map one-to-one onto the module config dataclasses (data, phantom,
model, neck, train, augment, eval, run). Values are parsed according to the
type of each field's default; tuples are comma-separated. The fully resolved
configuration is serialized next to every artifact a command produces so the
artifact can be reproduced from it.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from .dataio import AugmentConfig
from .neck import NeckConfig
from .network import UNetTinyConfig
from .phantom import PhantomConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """The configuration file or an override could not be applied."""


@dataclass
class DataConfig:
    root: str = "data/phantom"
    val_fraction: float = 0.25
    downsample_stride: int = 1


@dataclass
class NeckSettings:
    """Neck channel widths; zeros defer to the model's bottleneck width."""

    key_channels: int = 0
    value_channels: int = 0
    softmax_axis: str = "memory"
    key_init_gain: float = 3.0


@dataclass
class EvalConfig:
    batch_size: int = 8


@dataclass
class RunMeta:
    """Provenance written by commands; not read from user config files."""

    command: str = ""
    variant: str = ""
    seed: int = 0
    data: str = ""


_SECTIONS = {
    "data": DataConfig,
    "phantom": PhantomConfig,
    "model": UNetTinyConfig,
    "neck": NeckSettings,
    "train": TrainConfig,
    "augment": AugmentConfig,
    "eval": EvalConfig,
    "run": RunMeta,
}


def _parse_scalar(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        elem = default[0] if default else 0.0
        parts = text.split(",")
        try:
            return tuple(type(elem)(p.strip()) for p in parts)
        except ValueError:
            raise ConfigError(f"bad tuple value {text!r}") from None
    return text


def _format_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format_scalar(v) for v in value)
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    model: UNetTinyConfig = field(default_factory=UNetTinyConfig)
    neck: NeckSettings = field(default_factory=NeckSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunMeta = field(default_factory=RunMeta)

    @classmethod
    def default(cls) -> "RunConfig":
        return cls()

    def section(self, name: str):
        return getattr(self, name)

    def set_value(self, section: str, key: str, text: str) -> None:
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        obj = self.section(section)
        fields = {f.name: f for f in dataclasses.fields(obj)}
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        current = getattr(obj, key)
        setattr(obj, key, _parse_scalar(text, current))

    def apply_overrides(self, overrides) -> None:
        """Apply ``section.key=value`` strings (command-line --set flags)."""
        for item in overrides or ():
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form section.key=value")
            dotted, _, value = item.partition("=")
            if "." not in dotted:
                raise ConfigError(f"override {item!r} is not of the form section.key=value")
            section, _, key = dotted.strip().partition(".")
            self.set_value(section.strip(), key.strip(), value)
        self.validate()

    def validate(self) -> None:
        """Re-run every dataclass's invariant checks on the current values."""
        for name, cls in _SECTIONS.items():
            obj = self.section(name)
            values = {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
            try:
                setattr(self, name, cls(**values))
            except ValueError as exc:
                raise ConfigError(f"[{name}]: {exc}") from None

    @classmethod
    def from_file(cls, path, overrides=None) -> "RunConfig":
        cfg = cls.default()
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except (configparser.Error, OSError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for key, value in parser.items(section):
                cfg.set_value(section, key, value)
        cfg.validate()
        if overrides:
            cfg.apply_overrides(overrides)
        return cfg

    def to_text(self) -> str:
        out = io.StringIO()
        for name in _SECTIONS:
            obj = self.section(name)
            out.write(f"[{name}]\n")
            for f in dataclasses.fields(obj):
                out.write(f"{f.name} = {_format_scalar(getattr(obj, f.name))}\n")
            out.write("\n")
        return out.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    def make_neck_config(self) -> NeckConfig:
        return NeckConfig(
            c_in=self.model.bottleneck_channels,
            c_k=self.neck.key_channels,
            c_v=self.neck.value_channels,
            softmax_axis=self.neck.softmax_axis,
            key_init_gain=self.neck.key_init_gain,
        )
