"""Shared-embedding projection head, similarity map and contrastive loss.

Pixel features and the sentence feature are mapped into one embedding space;
their dot product, through a sigmoid, is the per-pixel text probability.
Training pulls text-pixel embeddings toward the sentence embedding and
pushes background pixels away, with annotation-level ignore regions excluded
from both sides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class ProjectedFeatures:
    """pixel: (B, N, D) embeddings on the stride-4 grid; text: (D,)."""

    pixel: torch.Tensor
    text: torch.Tensor
    grid_hw: tuple[int, int]


@dataclass
class SimilarityMap:
    """Full-resolution per-pixel text probability in [0, 1]."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = self.probabilities
        if p.ndim != 2:
            raise ValueError(f"expected an HxW grid, got shape {p.shape}")
        if not np.isfinite(p).all() or p.min() < 0 or p.max() > 1:
            raise ValueError("probabilities must be finite and within [0, 1]")


@dataclass
class GroundTruthMask:
    """Boolean text mask plus a disjoint mask of ignored (unreadable) pixels."""

    positive: np.ndarray
    ignore: np.ndarray

    def __post_init__(self):
        if self.positive.shape != self.ignore.shape:
            raise ValueError("positive and ignore masks must share a shape")
        if self.positive.dtype != bool or self.ignore.dtype != bool:
            raise ValueError("masks must be boolean arrays")
        if (self.positive & self.ignore).any():
            raise ValueError("a pixel cannot be both positive and ignored")


class Projector(nn.Module):
    """Affine maps into the shared space, with optional spatial upsampling
    of the pixel features when the decoder ran on a coarser grid."""

    def __init__(self, in_dim: int, text_dim: int, embed_dim: int = 64,
                 upsample_factor: int = 1):
        super().__init__()
        self.pixel_proj = nn.Linear(in_dim, embed_dim)
        self.text_proj = nn.Linear(text_dim, embed_dim)
        self.upsample_factor = upsample_factor

    def forward(self, fc: torch.Tensor, grid_hw: tuple[int, int],
                sentence: torch.Tensor) -> ProjectedFeatures:
        """fc: (B, N, C) with N = grid_hw[0] * grid_hw[1]; sentence: (C',)."""
        b, n, c = fc.shape
        h, w = grid_hw
        if n != h * w:
            raise ValueError(f"fc has {n} rows, grid {h}x{w} needs {h * w}")
        if self.upsample_factor > 1:
            f = self.upsample_factor
            grid = fc.transpose(1, 2).reshape(b, c, h, w)
            grid = F.interpolate(grid, scale_factor=f, mode="bilinear",
                                 align_corners=False)
            h, w = h * f, w * f
            fc = grid.flatten(2).transpose(1, 2)
        return ProjectedFeatures(
            pixel=self.pixel_proj(fc), text=self.text_proj(sentence),
            grid_hw=(h, w))


def pixel_logits(pf: ProjectedFeatures) -> torch.Tensor:
    """Dot product of every pixel embedding with the text embedding: (B, N)."""
    return pf.pixel @ pf.text


def similarity_probs(pf: ProjectedFeatures) -> torch.Tensor:
    """(B, h, w) sigmoid probabilities on the projector's grid."""
    h, w = pf.grid_hw
    return torch.sigmoid(pixel_logits(pf)).reshape(-1, h, w)


def similarity_map(pf: ProjectedFeatures, out_hw: tuple[int, int]) -> SimilarityMap:
    """Full-resolution map for a single sample (bilinear upsampling)."""
    probs = similarity_probs(pf)
    if probs.shape[0] != 1:
        raise ValueError("similarity_map expects a single-sample batch")
    up = F.interpolate(probs.unsqueeze(1), size=out_hw, mode="bilinear",
                       align_corners=False)[0, 0]
    up = up.clamp(0.0, 1.0)
    return SimilarityMap(probabilities=up.detach().cpu().numpy())


def downsample_mask(gt: GroundTruthMask, stride: int,
                    pos_threshold: float = 0.5,
                    dtype: torch.dtype = torch.float32):
    """Reduce a full-resolution mask to the stride grid.

    A cell is positive when at least `pos_threshold` of its source pixels are
    text; it is ignored when any source pixel is ignored.
    """
    h, w = gt.positive.shape
    if h % stride != 0 or w % stride != 0:
        raise ValueError(f"mask size {h}x{w} not divisible by stride {stride}")
    pos = torch.from_numpy(gt.positive).to(dtype).view(1, 1, h, w)
    ign = torch.from_numpy(gt.ignore).to(dtype).view(1, 1, h, w)
    frac = F.avg_pool2d(pos, stride)[0, 0]
    any_ign = F.max_pool2d(ign, stride)[0, 0]
    return frac >= pos_threshold, any_ign > 0


def contrastive_loss_from_logits(logits: torch.Tensor, positive: torch.Tensor,
                                 ignore: torch.Tensor,
                                 reduction: str = "mean") -> torch.Tensor:
    """Binary cross-entropy with logits over non-ignored pixels.

    positive/ignore are boolean tensors broadcastable to `logits`.  Ignored
    pixels contribute exactly zero value and zero gradient.
    """
    pos = (positive & ~ignore).to(logits.dtype)
    neg = (~positive & ~ignore).to(logits.dtype)
    count = pos.sum() + neg.sum()
    if count.item() == 0:
        raise ValueError("every pixel is ignored; the loss is undefined")
    per_pixel = F.softplus(-logits) * pos + F.softplus(logits) * neg
    total = per_pixel.sum()
    if reduction == "mean":
        return total / count
    if reduction == "sum":
        return total
    raise ValueError(f"unknown reduction {reduction!r}")


def contrastive_loss(pf: ProjectedFeatures, gt: GroundTruthMask,
                     pos_threshold: float = 0.5,
                     reduction: str = "mean") -> torch.Tensor:
    """Loss for a single sample against a full-resolution ground-truth mask."""
    h, w = pf.grid_hw
    stride = gt.positive.shape[0] // h
    if (h * stride, w * stride) != gt.positive.shape:
        raise ValueError(
            f"mask {gt.positive.shape} is not an integer multiple of the "
            f"projector grid {pf.grid_hw}")
    pos, ign = downsample_mask(gt, stride, pos_threshold, dtype=pf.pixel.dtype)
    logits = pixel_logits(pf).reshape(-1, h, w)
    return contrastive_loss_from_logits(logits, pos.unsqueeze(0),
                                        ign.unsqueeze(0), reduction)
