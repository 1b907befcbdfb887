"""Configuration records for the model, masking protocol and training run."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

import yaml

FULL_DECODER_CHANNELS = (1024, 512, 256, 128, 64)
DECODER_SPATIAL = (4, 8, 16, 32, 64)


class ConfigurationError(ValueError):
    """Raised when configured dimensions are inconsistent."""


@dataclass
class ModelConfig:
    """Architecture plus masking-protocol parameters.

    The node state width is not a free knob: initial node features are the
    concatenation of the class embedding (embed_dim), the 4 box coordinates
    and the visual encoding (visual_dim), and the graph network keeps that
    width across rounds.
    """

    num_object_classes: int = 49
    num_predicates: int = 4
    embed_dim: int = 48
    predicate_dim: int = 48
    visual_dim: int = 64
    sgn_rounds: int = 5
    segmap_size: int = 16
    image_size: int = 64
    image_feat_channels: int = 32
    channel_divisor: int = 4
    spade_hidden: int = 64
    noise_channels: int = 1
    noise_size: int = 4
    window_factor: float = 1.1
    residual_connection: bool = True
    out_scale: float = 4.0
    layout_overlap: str = "sum"  # or "max"
    # masking / progressive schedule
    p_rho: float = 0.5
    p_b: float = 0.3
    sigma: float = 1.0
    keep_fraction: float = 0.75
    passes: int = 2
    literal_corner_mode: bool = False
    masked_bbox_placeholder: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)

    @property
    def node_dim(self) -> int:
        return self.embed_dim + 4 + self.visual_dim

    def decoder_channels(self) -> tuple[int, ...]:
        chans = tuple(max(1, c // self.channel_divisor) for c in FULL_DECODER_CHANNELS)
        return chans

    def validate(self) -> None:
        if self.layout_overlap not in ("sum", "max"):
            raise ConfigurationError(f"unknown layout_overlap {self.layout_overlap!r}")
        if not 0.0 <= self.keep_fraction <= 1.0:
            raise ConfigurationError("keep_fraction must lie in [0, 1]")
        if self.sigma <= 0:
            raise ConfigurationError("sigma must be positive")
        if self.passes < 1:
            raise ConfigurationError("passes must be >= 1")
        for p in (self.p_rho, self.p_b):
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError("masking probabilities must lie in [0, 1]")

    @classmethod
    def thin(cls, **overrides: Any) -> "ModelConfig":
        """Channels divided by 16; used by gradient checks and smoke training."""
        kw: dict[str, Any] = dict(channel_divisor=16, spade_hidden=16)
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def tiny(cls, **overrides: Any) -> "ModelConfig":
        """Minimal dimensions for unit tests."""
        kw: dict[str, Any] = dict(
            embed_dim=6,
            predicate_dim=5,
            visual_dim=8,
            sgn_rounds=2,
            segmap_size=4,
            image_feat_channels=4,
            channel_divisor=64,
            spade_hidden=4,
        )
        kw.update(overrides)
        return cls(**kw)


@dataclass
class TrainConfig:
    """Optimization settings; loss weights follow the reference recipe."""

    batch_size: int = 32
    iterations: int = 5000
    seed: int = 0
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    adam_betas: tuple[float, float] = (0.0, 0.999)
    weight_l1: float = 1.0
    weight_hinge: float = 1.0
    weight_perceptual: float = 5.0
    weight_feature_matching: float = 5.0
    weight_bbox: float = 50.0
    weight_aux: float = 0.1
    log_every: int = 10
    checkpoint_every: int = 1000
    holdout_fraction: float = 0.1
    detach_between_passes: bool = True
    bbox_loss_all_nodes: bool = False
    use_object_head: bool = True
    use_progressive: bool = True


def _to_plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_to_plain(v) for v in value]
    return value


def config_to_dict(cfg: Any) -> dict[str, Any]:
    return {f.name: _to_plain(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}


def _from_dict(cls: type, data: dict[str, Any]) -> Any:
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def model_config_from_dict(data: dict[str, Any]) -> ModelConfig:
    cfg = _from_dict(ModelConfig, data)
    cfg.validate()
    return cfg


def train_config_from_dict(data: dict[str, Any]) -> TrainConfig:
    return _from_dict(TrainConfig, data)


def load_train_file(path: str) -> tuple[ModelConfig, TrainConfig]:
    """Read a YAML document with optional `model:` and `train:` sections."""
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    model = model_config_from_dict(doc.get("model", {}))
    train = train_config_from_dict(doc.get("train", {}))
    return model, train


def save_train_file(path: str, model: ModelConfig, train: TrainConfig) -> None:
    doc = {"model": config_to_dict(model), "train": config_to_dict(train)}
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
