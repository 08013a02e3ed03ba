"""Cross-modal transformer decoder.

Flattened visual features self-attend, then query the text token features
through cross-attention, then pass through a residual MLP; pre-norm
throughout.  Sinusoidal positional encodings (1-D for text, 2-D for the
visual grid) are added once at the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

# Above this many score entries per attention matrix, query rows are chunked
# to bound peak memory; the math is unchanged.
_CHUNK_SCORE_LIMIT = 4_000_000


def sinusoidal_encoding(length: int, dim: int, dtype=torch.float32,
                        device=None) -> torch.Tensor:
    """(length, dim); pair (2i, 2i+1) holds sin/cos of p / 10000^(2i/dim)."""
    if dim % 2 != 0:
        raise ValueError(f"encoding dim must be even, got {dim}")
    pos = torch.arange(length, dtype=dtype, device=device).unsqueeze(1)
    idx = torch.arange(0, dim, 2, dtype=dtype, device=device)
    freq = torch.pow(torch.tensor(10000.0, dtype=dtype, device=device), idx / dim)
    angle = pos / freq
    out = torch.zeros(length, dim, dtype=dtype, device=device)
    out[:, 0::2] = torch.sin(angle)
    out[:, 1::2] = torch.cos(angle)
    return out


def sinusoidal_encoding_2d(height: int, width: int, dim: int,
                           dtype=torch.float32, device=None) -> torch.Tensor:
    """(height*width, dim), rows in row-major grid order.

    First half of the channels encodes the row index, second half the column
    index, each with the 1-D formula.
    """
    if dim % 4 != 0:
        raise ValueError(f"2-D encoding dim must be divisible by 4, got {dim}")
    half = dim // 2
    rows = sinusoidal_encoding(height, half, dtype, device)
    cols = sinusoidal_encoding(width, half, dtype, device)
    out = torch.zeros(height * width, dim, dtype=dtype, device=device)
    out[:, :half] = rows.repeat_interleave(width, dim=0)
    out[:, half:] = cols.repeat(height, 1)
    return out


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention; self-attention when memory is None."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.num_heads, self.head_dim).transpose(1, 2)

    def forward(self, x: torch.Tensor, memory: torch.Tensor | None = None,
                return_probs: bool = False):
        """x: (B, Nq, dim); memory: (B, Nk, dim) or None for self-attention.

        Returns (out, probs) where probs is (B, heads, Nq, Nk) when requested,
        else None.
        """
        source = x if memory is None else memory
        if source.shape[1] == 0:
            raise ValueError("attention source has zero tokens")
        q = self._split(self.q_proj(x))
        k = self._split(self.k_proj(source))
        v = self._split(self.v_proj(source))
        scale = 1.0 / math.sqrt(self.head_dim)

        nq, nk = q.shape[2], k.shape[2]
        if not return_probs and q.dtype == torch.float32:
            # Fused kernel; avoids materializing the (Nq, Nk) score matrix.
            ctx = torch.nn.functional.scaled_dot_product_attention(q, k, v)
            probs = None
        elif return_probs or nq * nk <= _CHUNK_SCORE_LIMIT:
            probs = torch.softmax(q @ k.transpose(-2, -1) * scale, dim=-1)
            ctx = probs @ v
        else:
            rows = max(1, _CHUNK_SCORE_LIMIT // nk)
            pieces = []
            for s in range(0, nq, rows):
                scores = q[:, :, s:s + rows] @ k.transpose(-2, -1) * scale
                pieces.append(torch.softmax(scores, dim=-1) @ v)
            ctx = torch.cat(pieces, dim=2)
            probs = None
        b, _, n, _ = ctx.shape
        out = self.out_proj(ctx.transpose(1, 2).reshape(b, n, self.dim))
        return out, (probs if return_probs else None)


@dataclass
class DecoderConfig:
    num_layers: int = 3
    num_heads: int = 8
    model_dim: int = 128
    ff_dim: int = 1024
    visual_channels: int = 128
    text_channels: int = 64

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.model_dim % self.num_heads != 0:
            raise ValueError("model_dim must be divisible by num_heads")


class DecoderLayer(nn.Module):
    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        d = cfg.model_dim
        self.norm_self = nn.LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, cfg.num_heads)
        self.norm_cross = nn.LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, cfg.num_heads)
        self.norm_mlp = nn.LayerNorm(d)
        self.mlp = nn.Sequential(
            nn.Linear(d, cfg.ff_dim), nn.GELU(), nn.Linear(cfg.ff_dim, d))

    def forward(self, x, memory, return_probs=False):
        sa, sp = self.self_attn(self.norm_self(x), return_probs=return_probs)
        x = x + sa
        ca, cp = self.cross_attn(self.norm_cross(x), memory, return_probs=return_probs)
        x = x + ca
        x = x + self.mlp(self.norm_mlp(x))
        return x, (sp, cp)


class VisionLanguageDecoder(nn.Module):
    """Stack of self-attention / cross-attention / MLP layers.

    The visual grid is projected to the model width, flattened row-major,
    and positionally encoded; the text side is prepared once with
    :meth:`encode_text_tokens` (or replaced by any (B, L, dim) memory).
    """

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.cfg = cfg
        self.visual_proj = nn.Linear(cfg.visual_channels, cfg.model_dim)
        self.text_proj = nn.Linear(cfg.text_channels, cfg.model_dim)
        self.layers = nn.ModuleList(
            DecoderLayer(cfg) for _ in range(cfg.num_layers))

    def encode_text_tokens(self, per_token: torch.Tensor) -> torch.Tensor:
        """(L, text_channels) -> (1, L, model_dim), projected plus 1-D encoding."""
        if per_token.ndim != 2 or per_token.shape[0] == 0:
            raise ValueError("per_token must be a non-empty (L, C) matrix")
        mem = self.text_proj(per_token)
        mem = mem + sinusoidal_encoding(
            mem.shape[0], self.cfg.model_dim, dtype=mem.dtype, device=mem.device)
        return mem.unsqueeze(0)

    def embed_visual(self, grid: torch.Tensor) -> torch.Tensor:
        """(B, C, h, w) -> (B, h*w, model_dim) with the 2-D encoding added."""
        b, _, h, w = grid.shape
        x = self.visual_proj(grid.flatten(2).transpose(1, 2))
        return x + sinusoidal_encoding_2d(
            h, w, self.cfg.model_dim, dtype=x.dtype, device=x.device)

    def forward(self, grid: torch.Tensor, memory: torch.Tensor,
                return_attention: bool = False):
        """grid: (B, C, h, w); memory: (1 or B, L, model_dim).

        Returns (B, h*w, model_dim) multi-modal features, plus the per-layer
        (self, cross) attention probabilities when requested.
        """
        x = self.embed_visual(grid)
        if memory.shape[0] == 1 and x.shape[0] > 1:
            memory = memory.expand(x.shape[0], -1, -1)
        collected = []
        for layer in self.layers:
            x, probs = layer(x, memory, return_probs=return_attention)
            if return_attention:
                collected.append(probs)
        return (x, collected) if return_attention else x
