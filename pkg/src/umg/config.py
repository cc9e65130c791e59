"""Run configuration: nested dataclasses loaded from JSON, every key checked.

Defaults follow the method's published values where it gives them (batch 8,
Adam 1e-4, alpha 0.5, lambda_c 1e-3, lambda_s 2e-3) and desk-scale choices
elsewhere.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, get_type_hints

from .detection import DetectorConfig
from .pipeline import UmgConfig
from .protocols import ProtocolConfig
from .style import StyleLossConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    subjects: int = 40
    materials: int = 4
    sensors: list[str] = field(default_factory=lambda: ["A"])
    impressions: int = 2
    size: int = 256
    test_fraction: float = 0.5

    def __post_init__(self):
        if self.subjects < 2 or self.impressions < 1:
            raise ConfigError("data.subjects >= 2 and data.impressions >= 1 required")
        if self.materials < 2:
            raise ConfigError("data.materials must be >= 2")
        if self.size % 16:
            raise ConfigError("data.size must be divisible by 16")
        if not self.sensors:
            raise ConfigError("data.sensors must list at least one sensor id")


@dataclass
class UmgSection:
    steps: int | None = 100  # None: run every epoch in full
    epochs: int = 10
    batch_size: int = 8
    lr: float = 1e-4
    alpha: float = 0.5
    lambda_c: float = 1e-3
    lambda_s: float = 2e-3
    n_synth: int = 1000

    def __post_init__(self):
        if self.n_synth < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("umg.n_synth, umg.epochs and umg.batch_size must be >= 1")
        if self.steps is not None and self.steps < 1:
            raise ConfigError("umg.steps must be >= 1 or null")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("umg.alpha must lie in [0, 1]")
        if self.lr <= 0 or self.lambda_c < 0 or self.lambda_s < 0:
            raise ConfigError("umg.lr must be positive and the loss weights non-negative")

    def umg_config(self) -> UmgConfig:
        style = StyleLossConfig(lambda_c=self.lambda_c, lambda_s=self.lambda_s, alpha=self.alpha)
        return UmgConfig(style=style, batch_size=self.batch_size, lr=self.lr, epochs=self.epochs,
                         max_steps=self.steps)


@dataclass
class DetectorSection:
    epochs: int = 6
    batch_size: int = 64
    lr: float = 1e-3
    balance: bool = True
    max_patches: int = 8

    def __post_init__(self):
        if self.max_patches < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("detector.max_patches, detector.epochs and detector.batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("detector.lr must be positive")

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(self.epochs, self.batch_size, self.lr, self.balance)


@dataclass
class ProtocolSection:
    synth_ratio: float = 1.0
    live_synth_ratio: float = 0.0
    target_lives: int = 100
    fine_tune_epochs: int = 3

    def __post_init__(self):
        if self.target_lives < 1 or self.fine_tune_epochs < 1:
            raise ConfigError("protocol.target_lives and protocol.fine_tune_epochs must be >= 1")
        if self.synth_ratio <= 0 or self.live_synth_ratio < 0:
            raise ConfigError("protocol.synth_ratio must be > 0 and protocol.live_synth_ratio >= 0")


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    data: DataSection = field(default_factory=DataSection)
    umg: UmgSection = field(default_factory=UmgSection)
    detector: DetectorSection = field(default_factory=DetectorSection)
    protocol: ProtocolSection = field(default_factory=ProtocolSection)

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig(umg=self.umg.umg_config(), detector=self.detector.detector_config(),
                              alpha=self.umg.alpha, synth_ratio=self.protocol.synth_ratio,
                              live_synth_ratio=self.protocol.live_synth_ratio,
                              fine_tune_epochs=self.protocol.fine_tune_epochs, workers=self.threads)

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, raw: Any, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(raw).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    hints = get_type_hints(cls)
    kwargs = {}
    for name, value in raw.items():
        hint = hints[name]
        if is_dataclass(hint):
            kwargs[name] = _build(hint, value, f"{where}.{name}" if where else name)
        else:
            kwargs[name] = _coerce(hint, value, f"{where}.{name}" if where else name)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def _coerce(hint, value, where: str):
    """Type-check scalar fields; ints are accepted where floats are expected."""
    origin = getattr(hint, "__origin__", None)
    args = getattr(hint, "__args__", ())
    if value is None:
        if type(None) in args:
            return None
        raise ConfigError(f"{where}: null not allowed")
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        return [_coerce(args[0], v, where) for v in value]
    if args and type(None) in args:  # Optional[X]
        hint = next(a for a in args if a is not type(None))
    if hint is bool:
        ok = isinstance(value, bool)
    elif hint is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif hint is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif hint is str:
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{where}: expected {getattr(hint, '__name__', hint)}, got {value!r}")
    return value


def config_from_dict(raw: dict) -> RunConfig:
    return _build(RunConfig, raw, "")


def load_config(path: str | Path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(raw)
