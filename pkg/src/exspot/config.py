"""Run configuration: defaults, JSON config file, then CLI flag overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .losses import LossConfig
from .network import SpotterConfig
from .proposals import DecodeConfig


@dataclass(frozen=True)
class RunConfig:
    # snippet geometry
    snippet_len: int = 8
    overlap: int = 6
    # architecture
    stream_width: int = 1024  # per-stream feature width; model input is twice this
    embed_dim: int = 256
    duration: int = 2304
    embed_blocks: int = 2
    encoder_blocks: int = 2
    pyramid_blocks: int = 1
    heads: int = 4
    window: int = 19
    embed_kernel: int = 3
    decoder_kernel: int = 3
    full_width_scale: bool = False
    # loss
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    dice_eps: float = 1.0
    dice_weight: float = 1.0
    # optimization
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 4
    # plateau switch: when the epoch-mean loss fails to improve by
    # plateau_tol (relative) for plateau_patience consecutive epochs, the
    # learning rate is multiplied by plateau_factor, at most
    # plateau_max_boosts times.
    plateau_boost: bool = True
    plateau_patience: int = 2
    plateau_tol: float = 5e-2
    plateau_factor: float = 10.0
    plateau_max_boosts: int = 3
    # decoding and evaluation
    threshold: float = 0.05
    me_max_seconds: float = 0.5
    iou_threshold: float = 0.5
    # misc
    seed: int = 7
    threads: int = 1

    def validate(self) -> None:
        if not 0 <= self.overlap < self.snippet_len:
            raise ConfigError(
                f"overlap {self.overlap} must be in [0, snippet_len={self.snippet_len})"
            )
        positive = (
            "stream_width", "embed_dim", "duration", "epochs", "batch_size",
            "heads", "window", "threads", "embed_blocks",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("learning_rate", "plateau_factor", "me_max_seconds"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ConfigError(f"iou_threshold must be in (0, 1], got {self.iou_threshold}")
        if not 0.0 <= self.threshold < 1.0:
            raise ConfigError(f"threshold must be in [0, 1), got {self.threshold}")
        self.spotter_config().validate()

    def spotter_config(self) -> SpotterConfig:
        return SpotterConfig(
            input_width=2 * self.stream_width,
            embed_dim=self.embed_dim,
            duration=self.duration,
            embed_blocks=self.embed_blocks,
            encoder_blocks=self.encoder_blocks,
            pyramid_blocks=self.pyramid_blocks,
            heads=self.heads,
            window=self.window,
            embed_kernel=self.embed_kernel,
            decoder_kernel=self.decoder_kernel,
            full_width_scale=self.full_width_scale,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(
            focal_gamma=self.focal_gamma,
            focal_alpha=self.focal_alpha,
            dice_eps=self.dice_eps,
            dice_weight=self.dice_weight,
        )

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(threshold=self.threshold, me_max_seconds=self.me_max_seconds)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value):
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {name!r}")
    kind = _FIELD_TYPES[name]
    try:
        if kind == "bool":
            if isinstance(value, bool):
                return value
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
            raise ValueError(f"not a boolean: {value!r}")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {name!r}: {exc}") from exc
    return value


def load_config_file(path: Path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return raw


def build_config(
    file_path: Path | None = None, overrides: dict | None = None
) -> RunConfig:
    """Defaults, overridden by the config file, overridden by CLI flags."""
    merged = {}
    if file_path is not None:
        for key, value in load_config_file(file_path).items():
            merged[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        merged[key] = _coerce(key, value)
    cfg = RunConfig(**merged)
    cfg.validate()
    return cfg
