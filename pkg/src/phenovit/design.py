"""The seven-axis design point: one record that fully determines a run.

Serialized as flat dotted keys (``sampler.window``, ``model.dim``, ...) used
identically by config files and CLI flags, so a run's config echo can be fed
straight back in.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields, replace

from .errors import ConfigError
from .model import ModelConfig
from .sampler import (ARRANGEMENTS, BOUNDARIES, NORMALIZATIONS, WINDOW_SHAPES,
                      SamplerConfig, WindowSpec)
from .tokenizer import TOKENIZATIONS


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("true", "1", "yes", "on"):
        return True
    if isinstance(value, str) and value.lower() in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def _parse_optional_str(value):
    if value is None or value == "" or value == "none":
        return None
    return str(value)


@dataclass
class DesignPoint:
    normalization: str = "raw"
    arrangement: str = "rgbrgb"
    boundary: str = "black_padding"
    window: str = "square"
    k: int = 3
    tokenization: str = "temporal"
    use_pos_enc: bool = True
    aggregation: str = "cls"
    dim: int = 256
    layers: int = 6
    heads: int = 8
    mlp_width: int = 512
    dropout: float = 0.1
    epochs: int = 30
    lr: float = 3e-4
    weight_decay: float = 0.01
    batch_size: int = 256
    val_fraction: float = 0.2
    manifest: str | None = None
    synthetic: str | None = "four-class"
    seed: int = 42
    repeats: int = 1

    def validate(self) -> None:
        checks = (("sampler.normalization", self.normalization, NORMALIZATIONS),
                  ("sampler.arrangement", self.arrangement, ARRANGEMENTS),
                  ("sampler.boundary", self.boundary, BOUNDARIES),
                  ("sampler.window", self.window, WINDOW_SHAPES),
                  ("tokenizer.mode", self.tokenization, TOKENIZATIONS),
                  ("model.aggregation", self.aggregation, ("cls", "gap")))
        for key, value, allowed in checks:
            if value not in allowed:
                raise ConfigError(f"{key}: expected one of {'|'.join(allowed)}, "
                                  f"got '{value}'")
        try:
            self.to_window_spec()
        except ConfigError as exc:
            raise ConfigError(f"sampler.k: {exc}") from exc
        if self.manifest is None and self.synthetic is None:
            raise ConfigError("dataset.manifest or dataset.synthetic must be set")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"train.val_fraction: must be in (0, 1), "
                              f"got {self.val_fraction}")
        if self.repeats < 1:
            raise ConfigError(f"repeats: must be >= 1, got {self.repeats}")
        try:
            # placeholder geometry: only the architecture fields are checked here
            self.to_model_config(num_classes=2, num_tokens=1, token_dim=1).validate()
        except ConfigError as exc:
            raise ConfigError(f"model: {exc}") from exc
        try:
            self.to_train_config().validate()
        except ConfigError as exc:
            raise ConfigError(f"train: {exc}") from exc

    def to_window_spec(self) -> WindowSpec:
        if self.window == "square":
            return WindowSpec.square(self.k)
        return WindowSpec(self.window)

    def to_sampler_config(self) -> SamplerConfig:
        return SamplerConfig(normalization=self.normalization,
                             arrangement=self.arrangement,
                             boundary=self.boundary,
                             window=self.to_window_spec())

    def to_model_config(self, num_classes: int, num_tokens: int,
                        token_dim: int) -> ModelConfig:
        return ModelConfig(num_classes=num_classes, num_tokens=num_tokens,
                           token_dim=token_dim, dim=self.dim, layers=self.layers,
                           heads=self.heads, mlp_width=self.mlp_width,
                           dropout=self.dropout, use_pos_enc=self.use_pos_enc,
                           aggregation=self.aggregation)

    def to_train_config(self, seed: int | None = None):
        from .train import TrainConfig
        return TrainConfig(epochs=self.epochs, lr=self.lr,
                           weight_decay=self.weight_decay,
                           batch_size=self.batch_size,
                           seed=self.seed if seed is None else seed)

    def with_overrides(self, **kwargs) -> "DesignPoint":
        return replace(self, **kwargs)

    def to_flat(self) -> dict:
        return {key: getattr(self, attr) for key, (attr, _) in FLAT_KEYS.items()}

    @classmethod
    def from_flat(cls, mapping: dict) -> "DesignPoint":
        kwargs = {}
        for key, value in mapping.items():
            if key not in FLAT_KEYS:
                raise ConfigError(f"unknown config key '{key}'")
            attr, parse = FLAT_KEYS[key]
            try:
                kwargs[attr] = parse(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        design = cls(**kwargs)
        design.validate()
        return design


# flat dotted key -> (dataclass field, parser); the single source of truth for
# config files and CLI flags.
FLAT_KEYS: dict[str, tuple[str, type | object]] = {
    "sampler.normalization": ("normalization", str),
    "sampler.arrangement": ("arrangement", str),
    "sampler.boundary": ("boundary", str),
    "sampler.window": ("window", str),
    "sampler.k": ("k", int),
    "tokenizer.mode": ("tokenization", str),
    "model.use_pos_enc": ("use_pos_enc", _parse_bool),
    "model.aggregation": ("aggregation", str),
    "model.dim": ("dim", int),
    "model.layers": ("layers", int),
    "model.heads": ("heads", int),
    "model.mlp_width": ("mlp_width", int),
    "model.dropout": ("dropout", float),
    "train.epochs": ("epochs", int),
    "train.lr": ("lr", float),
    "train.weight_decay": ("weight_decay", float),
    "train.batch_size": ("batch_size", int),
    "train.val_fraction": ("val_fraction", float),
    "dataset.manifest": ("manifest", _parse_optional_str),
    "dataset.synthetic": ("synthetic", _parse_optional_str),
    "seed": ("seed", int),
    "repeats": ("repeats", int),
}

_FIELD_NAMES = {f.name for f in fields(DesignPoint)}
assert all(attr in _FIELD_NAMES for attr, _ in FLAT_KEYS.values())


def canonical_json(design: DesignPoint) -> str:
    return json.dumps(design.to_flat(), sort_keys=True, indent=2) + "\n"


def design_hash(design: DesignPoint, dataset_digest: str = "") -> str:
    payload = canonical_json(design) + dataset_digest
    return hashlib.sha256(payload.encode()).hexdigest()[:16]
