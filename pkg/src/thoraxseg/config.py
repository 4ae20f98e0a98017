"""Run configuration: one frozen dataclass tree, one flat text encoding.

Every leaf is addressable by a dotted path (``train.mixup.delta``,
``data.clahe.num_bins``); the same paths appear in config files (one
``key=value`` per line, ``#`` comments) and ``--set`` overrides. Values are
coerced by the declared field type, and any validation lives in the
dataclasses' ``__post_init__`` hooks, so a bad override fails loudly at
parse time. The sorted flat form also feeds the run's config hash.
"""

from __future__ import annotations

import hashlib
import typing
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from .dataset import SplitSpec, SynthConfig
from .errors import ConfigError
from .model import ModelConfig
from .preprocess import ClaheConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    root: str = ""
    resolution: int = 128
    clahe_enabled: bool = True
    clahe: ClaheConfig = field(default_factory=ClaheConfig)
    split: SplitSpec = field(default_factory=SplitSpec)

    def __post_init__(self):
        if self.resolution < 1:
            raise ConfigError(f"resolution must be >= 1, got {self.resolution}")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)


def _coerce(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    if origin is tuple:
        args = typing.get_args(tp)
        parts = [p for p in raw.split(",") if p != ""]
        if args and args[-1] is not Ellipsis and len(parts) != len(args):
            raise ConfigError(f"{key} expects {len(args)} comma-separated values, got {raw!r}")
        try:
            return tuple(int(p) for p in parts)
        except ValueError as exc:
            raise ConfigError(f"{key} expects integers, got {raw!r}") from exc
    if tp is bool:
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key} expects a boolean, got {raw!r}")
    if tp is int:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key} expects an integer, got {raw!r}") from exc
    if tp is float:
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key} expects a number, got {raw!r}") from exc
    if tp is str:
        return raw
    raise ConfigError(f"{key} has unsupported type {tp!r}")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def flatten(cfg: RunConfig) -> dict[str, str]:
    out: dict[str, str] = {}

    def walk(obj, prefix: str):
        for f in fields(obj):
            value = getattr(obj, f.name)
            key = f"{prefix}.{f.name}" if prefix else f.name
            if is_dataclass(value):
                walk(value, key)
            else:
                out[key] = _format(value)

    walk(cfg, "")
    return out


def set_key(cfg: RunConfig, dotted: str, raw: str) -> RunConfig:
    """Return a copy of `cfg` with one dotted path replaced by a coerced value."""
    segments = dotted.split(".")

    def assign(obj, remaining: list[str]):
        hints = typing.get_type_hints(type(obj))
        name = remaining[0]
        if name not in {f.name for f in fields(obj)}:
            raise ConfigError(f"unknown config key {dotted!r} (no field {name!r} in {type(obj).__name__})")
        current = getattr(obj, name)
        if len(remaining) == 1:
            if is_dataclass(current):
                raise ConfigError(f"{dotted!r} names a config group, not a value")
            return replace(obj, **{name: _coerce(raw, hints[name], dotted)})
        if not is_dataclass(current):
            raise ConfigError(f"unknown config key {dotted!r} ({name!r} is a value, not a group)")
        return replace(obj, **{name: assign(current, remaining[1:])})

    return assign(cfg, segments)


def apply_overrides(cfg: RunConfig, pairs: list[str]) -> RunConfig:
    """Apply ``key=value`` strings (from --set) left to right."""
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, raw = pair.split("=", 1)
        cfg = set_key(cfg, key.strip(), raw.strip())
    return cfg


def load_config_file(path: str | Path, cfg: RunConfig | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    cfg = cfg if cfg is not None else RunConfig()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key, raw = stripped.split("=", 1)
        cfg = set_key(cfg, key.strip(), raw.strip())
    return cfg


def config_hash(cfg: RunConfig) -> str:
    flat = flatten(cfg)
    text = "\n".join(f"{k}={flat[k]}" for k in sorted(flat))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_flat_config(path: str | Path, cfg: RunConfig) -> None:
    flat = flatten(cfg)
    lines = [f"{k}={flat[k]}" for k in sorted(flat)]
    Path(path).write_text("\n".join(lines) + "\n")
