"""Image-folder datasets, per-channel normalization, and pretraining augmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg"}


@dataclass(frozen=True)
class Normalization:
    """Per-channel mean/std applied after augmentation."""

    mean: tuple[float, ...] = (0.5, 0.5, 0.5)
    std: tuple[float, ...] = (0.5, 0.5, 0.5)

    def __post_init__(self):
        if len(self.mean) != len(self.std):
            raise ConfigurationError("normalization mean and std lengths differ")
        if any(s <= 0 for s in self.std):
            raise ConfigurationError("normalization std entries must be positive")

    @classmethod
    def identity(cls, channels: int = 3) -> "Normalization":
        return cls(mean=(0.0,) * channels, std=(1.0,) * channels)


def normalize(images: torch.Tensor, norm: Normalization) -> torch.Tensor:
    mean = torch.tensor(norm.mean, dtype=images.dtype).view(1, -1, 1, 1)
    std = torch.tensor(norm.std, dtype=images.dtype).view(1, -1, 1, 1)
    return (images - mean) / std


def denormalize(images: torch.Tensor, norm: Normalization) -> torch.Tensor:
    mean = torch.tensor(norm.mean, dtype=images.dtype).view(1, -1, 1, 1)
    std = torch.tensor(norm.std, dtype=images.dtype).view(1, -1, 1, 1)
    return images * std + mean


@dataclass(frozen=True)
class AugmentPolicy:
    """Pretraining augmentation: random resized crop + horizontal flip + normalize."""

    crop_enabled: bool = True
    crop_scale: tuple[float, float] = (0.2, 1.0)
    hflip_prob: float = 0.5
    normalization: Normalization = field(default_factory=Normalization)

    def __post_init__(self):
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigurationError(f"crop scale range must sit within (0, 1], got {self.crop_scale}")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ConfigurationError(f"flip probability must be in [0, 1], got {self.hflip_prob}")

    @classmethod
    def disabled(cls, normalization: Normalization | None = None) -> "AugmentPolicy":
        return cls(
            crop_enabled=False,
            hflip_prob=0.0,
            normalization=normalization or Normalization.identity(),
        )


def apply_augment(images: torch.Tensor, policy: AugmentPolicy, rng: torch.Generator) -> torch.Tensor:
    """Augment a [0, 1] image batch and normalize it.

    With crop disabled and flip probability 0 the output is exactly
    ``normalize(images)``; with a fixed generator the result is bit-identical
    across calls.
    """
    b, _, h, w = images.shape
    out = images
    if policy.crop_enabled:
        lo, hi = policy.crop_scale
        rows = []
        for i in range(b):
            area = lo + (hi - lo) * torch.rand(1, generator=rng).item()
            side = max(1, min(h, int(round(h * area**0.5))))
            top = int(torch.randint(0, h - side + 1, (1,), generator=rng).item())
            left = int(torch.randint(0, w - side + 1, (1,), generator=rng).item())
            crop = out[i : i + 1, :, top : top + side, left : left + side]
            if side != h:
                crop = F.interpolate(crop, size=(h, w), mode="bilinear", align_corners=False)
            rows.append(crop[0])
        out = torch.stack(rows)
    if policy.hflip_prob > 0:
        flip = torch.rand(b, generator=rng) < policy.hflip_prob
        out = torch.where(flip.view(b, 1, 1, 1), out.flip(-1), out)
    return normalize(out, policy.normalization)


def worker_generator(global_seed: int, worker_id: int, epoch: int) -> torch.Generator:
    """Independent generator for a data worker, stable under (seed, worker, epoch)."""
    mix = (global_seed * 1_000_003 + worker_id * 10_007 + epoch) % (2**63 - 1)
    gen = torch.Generator()
    gen.manual_seed(mix)
    return gen


def _load_image(path: Path, image_size: int) -> torch.Tensor:
    with Image.open(path) as img:
        img = img.convert("RGB")
        if img.size != (image_size, image_size):
            img = img.resize((image_size, image_size), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


class ImageFolderDataset:
    """Image-folder dataset: one subdirectory per class, or a flat directory.

    Samples are ordered by sorted path so that indexing is deterministic.
    Unreadable files are skipped with a logged warning; an empty scan is a
    configuration error.
    """

    def __init__(self, root, split: str = "train", image_size: int = 32):
        self.root = Path(root)
        self.split = split
        self.image_size = int(image_size)
        if not self.root.is_dir():
            raise ConfigurationError(f"dataset root does not exist: {self.root}")
        scan_root = self.root / split if (self.root / split).is_dir() else self.root
        self.scan_root = scan_root

        subdirs = sorted(p for p in scan_root.iterdir() if p.is_dir())
        class_dirs = [d for d in subdirs if any(_is_image(f) for f in d.iterdir())]
        self.class_names: list[str] = [d.name for d in class_dirs]

        paths: list[Path] = []
        labels: list[int] = []
        if class_dirs:
            for label, d in enumerate(class_dirs):
                for f in sorted(d.iterdir()):
                    if _is_image(f):
                        paths.append(f)
                        labels.append(label)
        else:
            paths = sorted(f for f in scan_root.iterdir() if _is_image(f))
            labels = []

        self.paths: list[Path] = []
        self.labels: list[int] | None = [] if class_dirs else None
        for i, p in enumerate(paths):
            try:
                with Image.open(p) as img:
                    img.verify()
            except Exception as exc:  # noqa: BLE001 - any decode failure is a skip
                logger.warning("skipping unreadable image %s (%s)", p, exc)
                continue
            self.paths.append(p)
            if self.labels is not None:
                self.labels.append(labels[i])
        if not self.paths:
            raise ConfigurationError(f"no samples found under {scan_root}")

    def __len__(self) -> int:
        return len(self.paths)

    def image(self, index: int) -> torch.Tensor:
        return _load_image(self.paths[index], self.image_size)

    def get_batch(self, indices) -> tuple[torch.Tensor, torch.Tensor | None]:
        images = torch.stack([self.image(int(i)) for i in indices])
        if self.labels is None:
            return images, None
        labels = torch.tensor([self.labels[int(i)] for i in indices], dtype=torch.long)
        return images, labels


class ArrayDataset:
    """In-memory dataset with the same access protocol as ImageFolderDataset."""

    def __init__(self, images: torch.Tensor, labels=None, class_names=None):
        if images.dim() != 4:
            raise ConfigurationError("ArrayDataset expects a B x C x H x W tensor")
        self.images = images.float()
        self.labels = None if labels is None else torch.as_tensor(labels, dtype=torch.long)
        self.class_names = list(class_names or [])
        self.image_size = images.shape[-1]
        if self.labels is not None and len(self.labels) != len(images):
            raise ConfigurationError("labels and images lengths differ")

    def __len__(self) -> int:
        return self.images.shape[0]

    def image(self, index: int) -> torch.Tensor:
        return self.images[index]

    def get_batch(self, indices):
        idx = torch.as_tensor(list(indices), dtype=torch.long)
        images = self.images[idx]
        if self.labels is None:
            return images, None
        return images, self.labels[idx]


def _is_image(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in IMAGE_EXTENSIONS


def load_dataset(root, split: str = "train", image_size: int = 32) -> ImageFolderDataset:
    return ImageFolderDataset(root, split=split, image_size=image_size)


def synthetic_color_dataset(
    num_classes: int, per_class: int, image_size: int = 32, seed: int = 0, noise: float = 0.1
) -> ArrayDataset:
    """Class-colored images plus noise; linearly separable by construction."""
    gen = torch.Generator().manual_seed(seed)
    hues = torch.rand(num_classes, 3, generator=gen)
    images, labels = [], []
    for c in range(num_classes):
        base = hues[c].view(3, 1, 1).expand(3, image_size, image_size)
        jitter = noise * torch.rand(per_class, 3, image_size, image_size, generator=gen)
        images.append((base.unsqueeze(0) * (1 - noise) + jitter).clamp(0, 1))
        labels.extend([c] * per_class)
    return ArrayDataset(
        torch.cat(images), labels=labels, class_names=[f"class{i}" for i in range(num_classes)]
    )


def synthetic_stripe_dataset(
    num_classes: int,
    per_class: int,
    image_size: int = 32,
    seed: int = 0,
    noise: float = 0.2,
    frequency: float = 3.0,
) -> ArrayDataset:
    """Oriented-stripe images: the label is the stripe orientation, while color
    and phase are random per image, so the class signal is spatial structure
    rather than mean color."""
    import math

    gen = torch.Generator().manual_seed(seed)
    ys, xs = torch.meshgrid(
        torch.arange(image_size, dtype=torch.float32),
        torch.arange(image_size, dtype=torch.float32),
        indexing="ij",
    )
    images, labels = [], []
    for c in range(num_classes):
        theta = math.pi * c / num_classes
        proj = (xs * math.cos(theta) + ys * math.sin(theta)) / image_size
        phase = torch.rand(per_class, 1, 1, generator=gen) * 2 * math.pi
        wave = 0.5 + 0.5 * torch.sin(2 * math.pi * frequency * proj + phase)
        color = 0.35 + 0.6 * torch.rand(per_class, 3, 1, 1, generator=gen)
        imgs = wave.unsqueeze(1) * color
        imgs = imgs + noise * torch.randn(per_class, 3, image_size, image_size, generator=gen)
        images.append(imgs.clamp(0, 1))
        labels.extend([c] * per_class)
    return ArrayDataset(
        torch.cat(images), labels=labels, class_names=[f"stripe{i}" for i in range(num_classes)]
    )
