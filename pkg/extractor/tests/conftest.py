"""Shared tiny-model fixtures: everything runs on randomly initialized
weights, no downloads."""

import numpy as np
import pytest
import torch
from PIL import Image

TINY_ARCH = {"dim": 32, "depth": 2, "num_heads": 4,
             "decoder": {"dim": 16, "depth": 1, "heads": 2}}


@pytest.fixture()
def image_dir(tmp_path):
    rng = np.random.default_rng(1)
    d = tmp_path / "imgs"
    d.mkdir()
    for i in range(2):
        arr = rng.integers(0, 256, (224, 224, 3)).astype(np.uint8)
        Image.fromarray(arr).save(d / f"im{i}.png")
    return d


@pytest.fixture()
def tiny_checkpoint(tmp_path):
    """Deterministic tiny ViT-B-shaped (but small) encoder checkpoint."""
    from vitshard.vit import VisionTransformer
    torch.manual_seed(0)
    model = VisionTransformer(image_size=224, patch_size=16, **{
        k: v for k, v in TINY_ARCH.items() if k != "decoder"})
    path = tmp_path / "tiny.pth"
    torch.save(model.state_dict(), path)
    return path
