"""Progressive pyramid fusion with learned normalized blend weights.

Adjacent pyramid levels are fused pairwise (upsample the coarser level,
concatenate, 3x3 conv): levels 4+8, 8+16 and 16+32 give three intermediates.
These are resampled to stride 4 and blended with softmax-normalized weights,
either three global scalars or a per-pixel weight grid.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import FeaturePyramid


def fusion_weights(logits: torch.Tensor) -> torch.Tensor:
    """Softmax over the branch axis (dim 0); nonnegative, sums to one."""
    return torch.softmax(logits, dim=0)


def adaptive_fuse(candidates: list[torch.Tensor], logits: torch.Tensor) -> torch.Tensor:
    """Weighted sum of same-shape candidates; differentiable in both inputs.

    logits: (n,) for global weights or (n, h, w) for per-pixel weights.
    """
    shapes = {tuple(c.shape) for c in candidates}
    if len(shapes) != 1:
        raise ValueError(f"candidates must share a shape, got {sorted(shapes)}")
    if logits.shape[0] != len(candidates):
        raise ValueError(
            f"{len(candidates)} candidates but {logits.shape[0]} weight logits")
    w = fusion_weights(logits)
    stack = torch.stack(candidates, dim=0)
    if w.ndim == 1:
        w = w.view(-1, *([1] * (stack.ndim - 1)))
    else:
        # per-pixel grid broadcast over batch and channel axes
        w = w.view(w.shape[0], *([1] * (stack.ndim - 3)), *w.shape[1:])
    return (w * stack).sum(dim=0)


class PairFusion(nn.Module):
    """Fuse one pyramid level with the next coarser one, at the finer size."""

    def __init__(self, low_channels: int, high_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(low_channels + high_channels, out_channels, 3, padding=1)
        self.act = nn.ReLU(inplace=True)

    def forward(self, low: torch.Tensor, high: torch.Tensor) -> torch.Tensor:
        up = F.interpolate(high, scale_factor=2, mode="bilinear", align_corners=False)
        if up.shape[-2:] != low.shape[-2:]:
            raise ValueError(
                f"upsampled high level {tuple(up.shape[-2:])} does not match "
                f"low level {tuple(low.shape[-2:])}")
        return self.act(self.conv(torch.cat([low, up], dim=1)))


class AdaptivePyramidFusion(nn.Module):
    """FeaturePyramid -> single stride-4 feature map with `out_channels`."""

    def __init__(self, in_channels: tuple[int, int, int, int],
                 out_channels: int = 128, pixelwise: bool = False,
                 grid_hw: tuple[int, int] | None = None):
        super().__init__()
        c2, c3, c4, c5 = in_channels
        self.out_channels = out_channels
        self.fuse_low = PairFusion(c2, c3, out_channels)
        self.fuse_mid = PairFusion(c3, c4, out_channels)
        self.fuse_high = PairFusion(c4, c5, out_channels)
        if pixelwise:
            if grid_hw is None:
                raise ValueError("pixelwise fusion needs the stride-4 grid size")
            self.logits = nn.Parameter(torch.zeros(3, *grid_hw))
        else:
            self.logits = nn.Parameter(torch.zeros(3))

    def forward(self, pyramid: FeaturePyramid) -> torch.Tensor:
        l4, l8, l16, l32 = pyramid.levels
        a = self.fuse_low(l4, l8)
        b = self.fuse_mid(l8, l16)
        c = self.fuse_high(l16, l32)
        size = a.shape[-2:]
        b = F.interpolate(b, size=size, mode="bilinear", align_corners=False)
        c = F.interpolate(c, size=size, mode="bilinear", align_corners=False)
        return adaptive_fuse([a, b, c], self.logits)
