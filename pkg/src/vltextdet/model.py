"""End-to-end detector assembly.

Wires the frozen text branch, the trainable visual pyramid, adaptive fusion,
the cross-modal decoder and the projection head into a single module that
turns an image (and optionally a prompt) into per-pixel text probabilities.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import PyramidBackbone
from .config import TrainConfig
from .decoder import DecoderConfig, VisionLanguageDecoder
from .fusion import AdaptivePyramidFusion
from .head import ProjectedFeatures, Projector, SimilarityMap, similarity_map
from .text_encoder import PromptLookupError, TextEncoder, TextFeatures
from .tokenizer import BpeTokenizer


class TextDetector(nn.Module):
    """Prompt-conditioned scene-text segmentation model."""

    def __init__(self, config: TrainConfig, tokenizer: BpeTokenizer | None = None):
        super().__init__()
        self.config = config
        self.tokenizer = tokenizer if tokenizer is not None else BpeTokenizer.default(
            vocab_size=config.vocab_size)
        self.text_encoder = TextEncoder(
            vocab_size=config.vocab_size, dim=config.text_dim,
            global_dim=config.text_global_dim, num_layers=config.text_layers,
            num_heads=config.text_heads, ff_dim=config.text_ff_dim,
            seed=config.text_encoder_seed, dtype=config.dtype)
        self.backbone = PyramidBackbone(config.backbone_channels)
        self.fusion = AdaptivePyramidFusion(
            config.backbone_channels, config.fused_channels,
            pixelwise=config.fusion_pixelwise,
            grid_hw=(config.image_size // 4,) * 2 if config.fusion_pixelwise else None)
        self.decoder = VisionLanguageDecoder(DecoderConfig(
            num_layers=config.decoder_layers, num_heads=config.decoder_heads,
            model_dim=config.decoder_dim, ff_dim=config.decoder_ff_dim,
            visual_channels=config.fused_channels, text_channels=config.text_dim))
        self.projector = Projector(
            in_dim=config.decoder_dim, text_dim=config.text_global_dim,
            embed_dim=config.embed_dim,
            upsample_factor=config.decoder_stride // 4)
        # Stand-ins used when the text branch is disabled: one learned decoder
        # memory token and one learned sentence embedding.  The forward pass
        # then never touches the prompt, so outputs cannot depend on it.
        self.no_text_memory = nn.Parameter(
            torch.randn(1, 1, config.decoder_dim) * 0.02)
        self.no_text_sentence = nn.Parameter(
            torch.randn(config.text_global_dim) * 0.02)
        mean = torch.tensor(config.norm_mean).view(1, 3, 1, 1)
        std = torch.tensor(config.norm_std).view(1, 3, 1, 1)
        self.register_buffer("input_mean", mean)
        self.register_buffer("input_std", std)
        self._text_cache: dict[str, TextFeatures] = {}
        if config.dtype is not torch.float32:
            self.to(config.dtype)

    # ---- text side -------------------------------------------------------

    def prompt_text(self, prompt_id: str | None = None) -> str:
        pid = prompt_id if prompt_id is not None else self.config.prompt_id
        try:
            return self.config.prompts[pid]
        except KeyError:
            raise PromptLookupError(
                f"unknown prompt id {pid!r}; "
                f"known: {sorted(self.config.prompts)}") from None

    def encode_prompt(self, prompt: str) -> TextFeatures:
        """Run the frozen text branch; results are cached per prompt string."""
        cached = self._text_cache.get(prompt)
        if cached is None:
            tokens = self.tokenizer.tokenize(prompt, self.config.max_tokens)
            cached = self.text_encoder.encode(tokens)
            self._text_cache[prompt] = cached
        return cached

    # ---- full pass -------------------------------------------------------

    def forward(self, images: torch.Tensor, text: TextFeatures | None = None,
                return_attention: bool = False):
        """images: (B, 3, H, W) in [0, 1]; H and W divisible by 32.

        Returns ProjectedFeatures, or (ProjectedFeatures, attention maps)
        when return_attention is set.
        """
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) images, got {tuple(images.shape)}")
        if self.config.text_enabled and text is None:
            text = self.encode_prompt(self.prompt_text())
        x = (images - self.input_mean) / self.input_std
        pyramid = self.backbone(x)
        fused = self.fusion(pyramid)
        pool = self.config.decoder_stride // 4
        if pool > 1:
            fused = F.avg_pool2d(fused, pool)
        if self.config.text_enabled:
            memory = self.decoder.encode_text_tokens(text.per_token)
            sentence = text.sentence
        else:
            memory = self.no_text_memory
            sentence = self.no_text_sentence
        out = self.decoder(fused, memory, return_attention=return_attention)
        fc, attention = out if return_attention else (out, None)
        h, w = fused.shape[2], fused.shape[3]
        pf = self.projector(fc, (h, w), sentence)
        if return_attention:
            return pf, attention
        return pf

    @torch.no_grad()
    def predict_map(self, images: torch.Tensor,
                    prompt_id: str | None = None) -> SimilarityMap:
        """Single-image probability map at the input resolution."""
        was_training = self.training
        self.eval()
        try:
            text = None
            if self.config.text_enabled:
                text = self.encode_prompt(self.prompt_text(prompt_id))
            pf = self.forward(images, text)
            return similarity_map(pf, (images.shape[2], images.shape[3]))
        finally:
            if was_training:
                self.train()

    # ---- bookkeeping -----------------------------------------------------

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def parameter_counts(self) -> dict[str, int]:
        trainable = sum(p.numel() for p in self.trainable_parameters())
        frozen = sum(p.numel() for p in self.parameters() if not p.requires_grad)
        return {"trainable": trainable, "frozen": frozen,
                "total": trainable + frozen}


def build_model(config: TrainConfig, tokenizer: BpeTokenizer | None = None) -> TextDetector:
    """Construct a detector with reproducible trainable-weight init."""
    torch.manual_seed(config.seed)
    model = TextDetector(config, tokenizer=tokenizer)
    if config.backbone_weights is not None:
        model.backbone.load_weights(config.backbone_weights)
    return model


def image_to_tensor(image: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """HxWx3 uint8 (or float in [0, 1]) RGB image -> (1, 3, H, W) tensor."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {image.shape}")
    if image.dtype == np.uint8:
        arr = image.astype(np.float32) / 255.0
    else:
        arr = image.astype(np.float32)
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("float images must lie in [0, 1]")
    t = torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1).unsqueeze(0)
    return t.to(dtype)
