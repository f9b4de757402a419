import numpy as np
import pytest
import torch
from PIL import Image

from percmae.config import RunConfig
from percmae.data import synthetic_color_dataset


def write_image_folder(root, classes: int, per_class: int, image_size: int = 32, seed: int = 0):
    """Write a small class-per-subdirectory PNG dataset; flat when classes == 0."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    if classes == 0:
        for i in range(per_class):
            arr = rng.integers(0, 256, size=(image_size, image_size, 3), dtype=np.uint8)
            Image.fromarray(arr).save(root / f"img_{i:03d}.png")
        return root
    for c in range(classes):
        sub = root / f"class_{c}"
        sub.mkdir(parents=True, exist_ok=True)
        base = rng.integers(0, 256, size=3)
        for i in range(per_class):
            noise = rng.integers(-30, 31, size=(image_size, image_size, 3))
            arr = np.clip(base[None, None, :] + noise, 0, 255).astype(np.uint8)
            Image.fromarray(arr).save(sub / f"img_{i:03d}.png")
    return root


@pytest.fixture
def image_folder(tmp_path):
    return write_image_folder(tmp_path / "data", classes=2, per_class=4)


@pytest.fixture
def flat_image_folder(tmp_path):
    return write_image_folder(tmp_path / "flat", classes=0, per_class=8)


def tiny_run_config(**overrides) -> RunConfig:
    """Small fast config for loop-level tests."""
    cfg = RunConfig()
    cfg.seed = 0
    cfg.epochs = 2
    cfg.data.image_size = 32
    cfg.data.crop_enabled = False
    cfg.data.hflip_prob = 0.0
    cfg.model.preset = ""
    cfg.model.encoder_depth = 2
    cfg.model.encoder_width = 64
    cfg.model.encoder_heads = 2
    cfg.model.decoder_depth = 2
    cfg.model.decoder_width = 64
    cfg.model.decoder_heads = 2
    cfg.optimizer.batch_size = 8
    cfg.optimizer.warmup_epochs = 1
    cfg.disc.base_channels = 8
    for key, value in overrides.items():
        obj = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            obj = getattr(obj, part)
        setattr(obj, parts[-1], value)
    return cfg


@pytest.fixture
def tiny_dataset():
    return synthetic_color_dataset(2, 12, image_size=32, seed=0)


def seeded(seed: int = 0) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(seed)
    return gen
