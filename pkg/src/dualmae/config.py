"""Run configuration: dataclasses, presets, and the flat key=value file.

A run is fully described by three dataclasses. The config file is a flat
list of ``key = value`` lines with no sections; unknown keys are rejected
by name so a typo cannot silently fall back to a default. Precedence,
lowest to highest: preset, config file, --set overrides, the
DUALMAE_SEED environment variable.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .model import DecoderConfig, EncoderConfig

SEED_ENV_VAR = "DUALMAE_SEED"


class ConfigError(ValueError):
    """A config key or value the run cannot proceed with."""


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "enhanced"
    mask_ratio_encoder: float = 0.15
    mask_ratio_decoder: float = 0.5
    decoder_layers: int = 1
    epochs: int = 8
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    warmup_steps: int = 0
    seed: int = 42
    encoder_mlm_weight: float = 0.0

    def __post_init__(self):
        if self.mode not in ("basic", "enhanced"):
            raise ConfigError(f"mode must be 'basic' or 'enhanced', got {self.mode!r}")
        for name in ("mask_ratio_encoder", "mask_ratio_decoder"):
            value = getattr(self, name)
            if not (0.0 < value < 1.0):
                raise ConfigError(f"{name} must lie strictly inside (0, 1), got {value}")
        if self.decoder_layers < 1:
            raise ConfigError("decoder_layers must be at least 1")
        if self.mode == "enhanced" and self.decoder_layers != 1:
            raise ConfigError("enhanced mode uses exactly one decoder layer")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate < 0 or self.weight_decay < 0 or self.encoder_mlm_weight < 0:
            raise ConfigError("rates and weights cannot be negative")
        if self.warmup_steps < 0 or self.seed < 0:
            raise ConfigError("warmup_steps and seed cannot be negative")


# key -> (python type, which dataclass consumes it)
_KEYS: dict[str, tuple[type, str]] = {
    "layers": (int, "encoder"),
    "hidden_dim": (int, "encoder"),
    "heads": (int, "encoder"),
    "ffn_dim": (int, "encoder"),
    "max_len": (int, "encoder"),
    "vocab_size": (int, "encoder"),
    "decoder_heads": (int, "decoder"),
    "mode": (str, "train"),
    "mask_ratio_encoder": (float, "train"),
    "mask_ratio_decoder": (float, "train"),
    "decoder_layers": (int, "train"),
    "epochs": (int, "train"),
    "batch_size": (int, "train"),
    "learning_rate": (float, "train"),
    "weight_decay": (float, "train"),
    "warmup_steps": (int, "train"),
    "seed": (int, "train"),
    "encoder_mlm_weight": (float, "train"),
}

PRESETS: dict[str, dict[str, object]] = {
    # the published full-scale recipe; not meant to be trained here
    "full": {
        "layers": 12,
        "hidden_dim": 768,
        "heads": 12,
        "ffn_dim": 3072,
        "max_len": 512,
        "vocab_size": 30522,
        "decoder_heads": 12,
        "mode": "enhanced",
        "mask_ratio_encoder": 0.15,
        "mask_ratio_decoder": 0.5,
        "decoder_layers": 1,
        "epochs": 8,
        "batch_size": 32,
        "learning_rate": 1e-4,
        "weight_decay": 0.01,
        "warmup_steps": 0,
        "seed": 42,
        "encoder_mlm_weight": 0.0,
    },
    # small enough to train on one core while keeping every mechanism intact
    "desk": {
        "layers": 2,
        "hidden_dim": 64,
        "heads": 4,
        "ffn_dim": 256,
        "max_len": 128,
        "vocab_size": 2048,
        "decoder_heads": 4,
        "mode": "enhanced",
        "mask_ratio_encoder": 0.15,
        "mask_ratio_decoder": 0.5,
        "decoder_layers": 1,
        "epochs": 8,
        "batch_size": 32,
        "learning_rate": 1e-3,
        "weight_decay": 0.01,
        "warmup_steps": 0,
        "seed": 42,
        "encoder_mlm_weight": 0.0,
    },
}


def _coerce(key: str, raw: str, where: str) -> object:
    kind, _ = _KEYS[key]
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key!r} in {where}: {raw!r}") from None


def parse_config_file(path: str | Path) -> dict[str, object]:
    """Read ``key = value`` lines; unknown keys are an error, not a warning."""
    values: dict[str, object] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw, f"{path}:{lineno}")
    return values


def parse_overrides(pairs: Iterable[str]) -> dict[str, object]:
    """--set key=value pairs from the command line."""
    values: dict[str, object] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw.strip(), "--set")
    return values


def resolve_configs(
    preset: str = "full",
    file_values: Mapping[str, object] | None = None,
    overrides: Mapping[str, object] | None = None,
    env: Mapping[str, str] | None = None,
) -> tuple[TrainConfig, EncoderConfig, DecoderConfig]:
    """Merge all sources and build the three validated configs."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    merged = dict(PRESETS[preset])
    merged.update(file_values or {})
    merged.update(overrides or {})
    env = os.environ if env is None else env
    if SEED_ENV_VAR in env:
        try:
            merged["seed"] = int(env[SEED_ENV_VAR])
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env[SEED_ENV_VAR]!r}") from None

    enc_kwargs = {k: merged[k] for k, (_, where) in _KEYS.items() if where == "encoder"}
    train_kwargs = {k: merged[k] for k, (_, where) in _KEYS.items() if where == "train"}
    try:
        encoder = EncoderConfig(**enc_kwargs)
        train = TrainConfig(**train_kwargs)
        decoder = DecoderConfig(
            mode=train.mode,
            layers=train.decoder_layers,
            heads=int(merged["decoder_heads"]),
        )
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return train, encoder, decoder


def config_as_flat_dict(
    train: TrainConfig, encoder: EncoderConfig, decoder: DecoderConfig
) -> dict[str, object]:
    """The inverse of resolve_configs, for checkpoints and reports."""
    out: dict[str, object] = {}
    for key, (_, where) in _KEYS.items():
        if where == "encoder":
            out[key] = getattr(encoder, key)
        elif where == "train":
            out[key] = getattr(train, key)
        else:
            out[key] = decoder.heads
    return out
