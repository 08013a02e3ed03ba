import numpy as np
import pytest
import torch

from vltextdet.config import TrainConfig
from vltextdet.data.synth import SynthSpec, synthesize_sample
from vltextdet.training import fit, save_checkpoint


def tiny_config(**overrides) -> TrainConfig:
    """Smallest config that still exercises every stage."""
    base = dict(
        image_size=64, batch_size=2, epochs=2, lr=1e-3, augment=False,
        backbone_channels=(8, 16, 32, 64), fused_channels=32,
        decoder_layers=2, decoder_heads=4, decoder_dim=32, decoder_ff_dim=64,
        text_dim=16, text_global_dim=16, text_layers=1, text_heads=2,
        text_ff_dim=32, embed_dim=16, min_area=4,
    )
    base.update(overrides)
    return TrainConfig(**base)


def tiny_samples(n: int = 2, image_size: int = 64, seed0: int = 100, **spec_kw):
    spec = SynthSpec(image_size=image_size, **spec_kw)
    return [synthesize_sample(seed0 + i, spec) for i in range(n)]


@pytest.fixture(scope="session")
def trained_artifacts(tmp_path_factory):
    """A briefly trained tiny checkpoint plus its training samples."""
    root = tmp_path_factory.mktemp("trained")
    config = tiny_config(epochs=1, seed=3)
    samples = tiny_samples(2, seed0=40)
    result = fit(config, samples, out_dir=None, max_steps=2)
    ckpt = root / "tiny.pt"
    save_checkpoint(ckpt, result.model, epoch=0, history=result.history)
    return {"checkpoint": ckpt, "config": config, "samples": samples,
            "model": result.model}


@pytest.fixture(autouse=True)
def _seeded():
    torch.manual_seed(0)
    np.random.seed(0)
