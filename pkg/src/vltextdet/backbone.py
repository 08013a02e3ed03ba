"""Trainable convolutional backbone producing a four-level feature pyramid.

Five stages of residual blocks; the outputs of stages 2-5 form the pyramid
at strides 4/8/16/32.  GroupNorm keeps single-image and batched forwards
identical, which matters for CPU-scale training and bit-exact checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn

PYRAMID_STRIDES = (4, 8, 16, 32)


@dataclass
class FeaturePyramid:
    """Ordered stride-4/8/16/32 feature maps, each (B, C_i, H/s, W/s)."""

    levels: list[torch.Tensor]

    def __post_init__(self):
        if len(self.levels) != 4:
            raise ValueError(f"expected 4 pyramid levels, got {len(self.levels)}")
        for i in range(1, 4):
            prev, cur = self.levels[i - 1].shape, self.levels[i].shape
            if (prev[-2], prev[-1]) != (2 * cur[-2], 2 * cur[-1]):
                raise ValueError(
                    f"level {i} must halve level {i - 1}: {prev} vs {cur}")

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(lvl.shape[-3] for lvl in self.levels)


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, channels), channels)


class ResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.norm1 = _norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.norm2 = _norm(out_ch)
        self.act = nn.ReLU(inplace=True)
        if stride != 1 or in_ch != out_ch:
            self.skip = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False), _norm(out_ch))
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        out = self.act(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return self.act(out + self.skip(x))


class PyramidBackbone(nn.Module):
    """Maps (B, 3, H, W) with H, W divisible by 32 to a 4-level pyramid."""

    def __init__(self, channels: tuple[int, int, int, int] = (32, 64, 128, 256)):
        super().__init__()
        if len(channels) != 4:
            raise ValueError("channels must list the four stage widths")
        self.channels = tuple(channels)
        stem_ch = max(16, channels[0] // 2)
        self.stem = nn.Sequential(
            nn.Conv2d(3, stem_ch, 3, stride=2, padding=1, bias=False),
            _norm(stem_ch), nn.ReLU(inplace=True))
        widths = (stem_ch,) + self.channels
        self.stages = nn.ModuleList(
            nn.Sequential(ResidualBlock(widths[i], widths[i + 1], stride=2),
                          ResidualBlock(widths[i + 1], widths[i + 1]))
            for i in range(4))

    def forward(self, x: torch.Tensor) -> FeaturePyramid:
        h, w = x.shape[-2], x.shape[-1]
        if h % 32 != 0 or w % 32 != 0:
            raise ValueError(
                f"input size {h}x{w} not divisible by 32; resize the image "
                "(the data pipeline does this) before encoding")
        out = self.stem(x)
        levels = []
        for stage in self.stages:
            out = stage(out)
            levels.append(out)
        return FeaturePyramid(levels=levels)

    def load_weights(self, path: str | Path) -> None:
        """Load a plain state dict for this module; shapes must match."""
        state = torch.load(Path(path), map_location="cpu", weights_only=True)
        self.load_state_dict(state)
