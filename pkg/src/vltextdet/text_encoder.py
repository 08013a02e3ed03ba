"""Frozen text frontend: prompt registry and token-sequence encoder.

The encoder is a small bidirectional transformer whose weights are drawn
once from a seeded generator and then frozen; its job is to supply stable
per-token features and a sentence feature pooled at the EOS position.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import DEFAULT_PROMPTS
from .decoder import MultiHeadAttention, sinusoidal_encoding
from .tokenizer import TokenSequence


class PromptLookupError(KeyError):
    pass


class PromptRegistry:
    """Named prompt strings; ships with the three default detection prompts."""

    def __init__(self, entries: dict[str, str] | None = None):
        self.entries = dict(DEFAULT_PROMPTS if entries is None else entries)

    def get(self, prompt_id: str) -> str:
        try:
            return self.entries[prompt_id]
        except KeyError:
            raise PromptLookupError(
                f"unknown prompt id {prompt_id!r}; known: {sorted(self.entries)}") from None

    def add(self, prompt_id: str, text: str) -> None:
        if prompt_id in self.entries:
            raise ValueError(f"prompt id {prompt_id!r} already registered")
        self.entries[prompt_id] = text

    def ids(self) -> list[str]:
        return sorted(self.entries)


@dataclass
class TextFeatures:
    """Per-token features (L, C) and the EOS-pooled sentence feature (C',)."""

    per_token: torch.Tensor
    sentence: torch.Tensor


class _EncoderBlock(nn.Module):
    def __init__(self, dim, heads, ff_dim):
        super().__init__()
        self.norm_attn = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, ff_dim), nn.GELU(), nn.Linear(ff_dim, dim))

    def forward(self, x):
        a, _ = self.attn(self.norm_attn(x))
        x = x + a
        return x + self.mlp(self.norm_mlp(x))


class TextEncoder(nn.Module):
    """Frozen token encoder; deterministic given (seed, shape hyperparameters)."""

    def __init__(self, vocab_size: int = 49152, dim: int = 64,
                 global_dim: int = 64, num_layers: int = 2, num_heads: int = 4,
                 ff_dim: int = 256, seed: int = 7741,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.dim = dim
        self.global_dim = global_dim
        self.embed = nn.Embedding(vocab_size, dim)
        self.blocks = nn.ModuleList(
            _EncoderBlock(dim, num_heads, ff_dim) for _ in range(num_layers))
        self.final_norm = nn.LayerNorm(dim)
        self.sentence_proj = nn.Linear(dim, global_dim)
        self._seeded_init(seed)
        self.to(dtype)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def _seeded_init(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for name, p in sorted(self.named_parameters(), key=lambda kv: kv[0]):
            with torch.no_grad():
                if "norm" in name and name.endswith("weight"):
                    p.fill_(1.0)
                elif name.endswith("bias") or ("norm" in name):
                    p.zero_()
                else:
                    p.copy_(torch.randn(p.shape, generator=gen) * 0.02)

    def fingerprint(self) -> str:
        """Hash of every frozen parameter; checkpoints store and verify it."""
        digest = hashlib.sha256()
        for name, p in sorted(self.named_parameters(), key=lambda kv: kv[0]):
            digest.update(name.encode())
            digest.update(str(tuple(p.shape)).encode())
            digest.update(str(p.dtype).encode())
            digest.update(p.detach().cpu().contiguous().numpy().tobytes())
        return digest.hexdigest()

    def encode(self, tokens: TokenSequence) -> TextFeatures:
        """Features for the real (unpadded) tokens; sentence feature from EOS."""
        dtype = self.embed.weight.dtype
        ids = torch.tensor(tokens.real_ids, dtype=torch.long)
        with torch.no_grad():
            x = self.embed(ids)
            x = x + sinusoidal_encoding(len(ids), self.dim, dtype=dtype)
            x = x.unsqueeze(0)
            for block in self.blocks:
                x = block(x)
            hidden = self.final_norm(x).squeeze(0)
            sentence = self.sentence_proj(hidden[tokens.length - 1])
        return TextFeatures(per_token=hidden, sentence=sentence)
