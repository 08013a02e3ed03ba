"""Prompt-conditioned scene-text detection: frozen text encoder, CNN
pyramid with adaptive fusion, cross-modal decoder and a text-to-pixel
contrastive head."""

from .config import ConfigError, TrainConfig
from .tokenizer import BpeTokenizer, TokenizerError, TokenSequence

__version__ = "0.1.0"

__all__ = [
    "BpeTokenizer",
    "ConfigError",
    "TokenSequence",
    "TokenizerError",
    "TrainConfig",
    "__version__",
]
