"""Run configuration.

Every hyperparameter and every convention the architecture leaves open is a
field here, so a serialized config plus a seed pins a run completely.  Field
defaults are the full-scale reference settings; ``TrainConfig.preset("desk")``
swaps in a budget that trains in minutes on one CPU core.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch
import yaml

DEFAULT_PROMPTS = {
    "P1": "Detect Any text in the image.",
    "P2": "Where is text located in the scene?",
    "P3": "Detect Any text in the scene.",
}


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # optimization
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 1e-5
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 10          # epochs
    epochs: int = 110
    optimizer: str = "adam"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    max_steps: int | None = None      # optional hard cap on optimizer steps
    augment: bool = True
    seed: int = 0
    precision: str = "float32"        # "float32" | "float64"
    mixed_precision: bool = False     # accepted but unused on CPU

    # input
    image_size: int = 512
    norm_mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    norm_std: tuple[float, float, float] = (0.25, 0.25, 0.25)

    # text frontend (frozen)
    vocab_size: int = 49152
    max_tokens: int = 77
    text_dim: int = 64                # per-token feature width
    text_global_dim: int = 64         # sentence feature width
    text_layers: int = 2
    text_heads: int = 4
    text_ff_dim: int = 256
    text_encoder_seed: int = 7741
    text_enabled: bool = True
    prompt_id: str = "P1"
    prompts: dict = field(default_factory=lambda: dict(DEFAULT_PROMPTS))

    # image encoder
    backbone_channels: tuple[int, int, int, int] = (32, 64, 128, 256)
    backbone_weights: str | None = None

    # pyramid fusion
    fused_channels: int = 128
    fusion_pixelwise: bool = False

    # decoder
    decoder_layers: int = 3
    decoder_heads: int = 8
    decoder_dim: int = 128
    decoder_ff_dim: int = 1024
    decoder_stride: int = 4           # grid the decoder runs on; 4 = native

    # projector / loss
    embed_dim: int = 64
    loss_reduction: str = "mean"      # "mean" | "sum"
    mask_pos_threshold: float = 0.5   # block text fraction to count as positive

    # postprocess
    binarize_threshold: float = 0.5
    min_area: int = 16
    polygon_mode: str = "quad"        # "quad" | "polygon14"

    # evaluation
    eval_iou_thresholds: tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9)

    def __post_init__(self):
        positive = {
            "batch_size": self.batch_size, "lr": self.lr,
            "lr_decay_factor": self.lr_decay_factor,
            "lr_decay_every": self.lr_decay_every, "epochs": self.epochs,
            "image_size": self.image_size, "vocab_size": self.vocab_size,
            "decoder_heads": self.decoder_heads, "decoder_ff_dim": self.decoder_ff_dim,
            "decoder_dim": self.decoder_dim, "embed_dim": self.embed_dim,
            "fused_channels": self.fused_channels, "text_dim": self.text_dim,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.decoder_layers < 1:
            raise ConfigError("decoder_layers must be >= 1")
        if self.decoder_dim % self.decoder_heads != 0:
            raise ConfigError("decoder_dim must be divisible by decoder_heads")
        if self.image_size % 32 != 0:
            raise ConfigError("image_size must be divisible by 32")
        if self.decoder_stride not in (4, 8, 16):
            raise ConfigError("decoder_stride must be one of 4, 8, 16")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"unknown precision {self.precision!r}")
        if self.loss_reduction not in ("mean", "sum"):
            raise ConfigError(f"unknown loss_reduction {self.loss_reduction!r}")
        if self.polygon_mode not in ("quad", "polygon14"):
            raise ConfigError(f"unknown polygon_mode {self.polygon_mode!r}")
        if len(self.backbone_channels) != 4:
            raise ConfigError("backbone_channels needs exactly 4 entries")
        for name, value in (("binarize_threshold", self.binarize_threshold),
                            ("mask_pos_threshold", self.mask_pos_threshold)):
            if not 0.0 < value < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {value}")

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == "float64" else torch.float32

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        if name == "paper":
            base = dict(backbone_channels=(256, 512, 1024, 2048))
        elif name == "desk":
            base = dict(
                epochs=20, batch_size=4, image_size=128, lr=1e-3,
                lr_decay_every=50, augment=False,
            )
        else:
            raise ConfigError(f"unknown preset {name!r}")
        base.update(overrides)
        return cls(**base)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - fields
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        for key in ("adam_betas", "norm_mean", "norm_std", "backbone_channels",
                    "eval_iou_thresholds"):
            if key in kwargs and isinstance(kwargs[key], list):
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        if path.suffix in (".yaml", ".yml"):
            path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))
        else:
            path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        path = Path(path)
        text = path.read_text()
        data = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
        return cls.from_dict(data)

    def replace(self, **changes) -> "TrainConfig":
        fields = {f.name for f in dataclasses.fields(self)}
        unknown = set(changes) - fields
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(self, **changes)
