"""End-to-end reconstruction evaluation and PNG rendering.

FID/IS at desk scale use a pluggable embedder; the default is a seeded,
frozen convolutional network, and every report carries an ``embedder_id``
because scores from different embedders are not comparable.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image

from .data import Normalization, denormalize, normalize
from .exceptions import ConfigurationError
from .metrics import EmbeddingSet, MetricsReport, compute_fid, compute_is, psnr, ssim_metric
from .patches import MaskPlan, composite, sample_mask

GRAY_FILL = 0.5


class ConvEmbedder(nn.Module):
    """Seeded frozen conv net providing embeddings and class posteriors."""

    def __init__(self, in_channels: int = 3, feature_dim: int = 64, num_classes: int = 10, seed: int = 0):
        super().__init__()
        self.seed = seed
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.conv1 = nn.Conv2d(in_channels, 16, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(32, feature_dim, 3, stride=2, padding=1)
        self.head = nn.Linear(feature_dim, num_classes)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.randn(p.shape, generator=gen) * 0.25)
        self.requires_grad_(False)
        self.eval()

    @property
    def embedder_id(self) -> str:
        return f"conv-embedder/seed={self.seed}/dim={self.feature_dim}/classes={self.num_classes}"

    def features(self, images: torch.Tensor) -> torch.Tensor:
        x = F.leaky_relu(self.conv1(images), 0.2)
        x = F.leaky_relu(self.conv2(x), 0.2)
        x = F.leaky_relu(self.conv3(x), 0.2)
        return x.mean(dim=(2, 3))

    def embed(self, images: torch.Tensor) -> np.ndarray:
        with torch.no_grad():
            return self.features(images).double().numpy()

    def class_probs(self, images: torch.Tensor) -> np.ndarray:
        with torch.no_grad():
            return self.head(self.features(images)).softmax(dim=-1).double().numpy()


class IdentityOracle:
    """Bypass model returning its target; used to validate metric plumbing."""

    def __init__(self, num_patches: int):
        self.num_patches = num_patches

    def reconstruct(self, images: torch.Tensor, plan: MaskPlan | None = None) -> torch.Tensor:
        return images


def evaluate_reconstruction(
    model,
    dataset,
    embedder: ConvEmbedder | None = None,
    mask_ratio: float = 0.75,
    seed: int = 0,
    batch_size: int = 32,
    normalization: Normalization | None = None,
    max_samples: int | None = None,
) -> MetricsReport:
    """Mask each eval image with a fixed seed, reconstruct, and score.

    Pixel metrics are computed in the raw [0, 1] image space; the model sees
    normalized inputs and its outputs are denormalized back.
    """
    embedder = embedder or ConvEmbedder()
    norm = normalization or Normalization.identity()
    rng = torch.Generator().manual_seed(seed)
    total = len(dataset) if max_samples is None else min(max_samples, len(dataset))
    if total < 2:
        raise ConfigurationError("evaluation needs at least two samples")
    preds, targets = [], []
    for start in range(0, total, batch_size):
        idx = range(start, min(start + batch_size, total))
        images, _ = dataset.get_batch(idx)
        plan = sample_mask(model.num_patches, mask_ratio, rng, batch_size=images.shape[0])
        with torch.no_grad():
            recon = model.reconstruct(normalize(images, norm), plan)
        preds.append(denormalize(recon, norm))
        targets.append(images)
    pred = torch.cat(preds)
    target = torch.cat(targets)

    l1 = float((pred - target).abs().mean())
    psnr_db = psnr(pred, target, max_value=1.0)
    ssim_val = ssim_metric(pred, target, max_value=1.0)
    emb_pred = EmbeddingSet(embedder.embed(pred), source="reconstructions")
    emb_real = EmbeddingSet(embedder.embed(target), source="originals")
    fid = compute_fid(emb_pred, emb_real)
    probs = embedder.class_probs(pred)
    splits = min(4, probs.shape[0])
    is_mean, is_std = compute_is(probs, splits=splits)
    return MetricsReport(
        l1=l1,
        psnr=psnr_db,
        ssim=ssim_val,
        is_mean=is_mean,
        is_std=is_std,
        fid=fid,
        sample_count=total,
        embedder_id=embedder.embedder_id,
    )


def write_report(report: MetricsReport, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    json_path.write_text(report.to_json() + "\n")
    table_path = out / "table.txt"
    table_path.write_text(report.to_table() + "\n")
    return json_path, table_path


def _to_pil(image: torch.Tensor) -> Image.Image:
    arr = (image.clamp(0, 1) * 255).round().byte().permute(1, 2, 0).numpy()
    return Image.fromarray(arr)


def _hcat(panels: list[torch.Tensor], pad: int = 2) -> torch.Tensor:
    c, h, _ = panels[0].shape
    sep = torch.ones(c, h, pad)
    row = []
    for i, panel in enumerate(panels):
        if i:
            row.append(sep)
        row.append(panel)
    return torch.cat(row, dim=2)


def render_outputs(
    model,
    images: torch.Tensor,
    out_dir,
    mask_ratio: float = 0.75,
    seed: int = 0,
    normalization: Normalization | None = None,
) -> list[Path]:
    """Write per-image (original | masked | reconstruction) grids plus
    per-head class-token attention heatmaps, normalized to [0, 1] per map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    norm = normalization or Normalization.identity()
    rng = torch.Generator().manual_seed(seed)
    b, _, h, w = images.shape
    plan = sample_mask(model.num_patches, mask_ratio, rng, batch_size=b)
    x = normalize(images, norm)
    with torch.no_grad():
        recon = denormalize(model.reconstruct(x, plan), norm).clamp(0, 1)
        maps = model.extract_cls_attention(x)
    masked = composite(images, torch.full_like(images, GRAY_FILL), plan)

    paths = []
    grid_side = int(round(model.num_patches**0.5))
    for i in range(b):
        grid = _hcat([images[i], masked[i], recon[i]])
        grid_path = out / f"sample_{i:03d}_grid.png"
        _to_pil(grid).save(grid_path)
        paths.append(grid_path)

        head_maps = maps.cls_row[i].reshape(-1, grid_side, grid_side)
        panels = []
        for hm in head_maps:
            lo, hi = hm.min(), hm.max()
            hm = (hm - lo) / (hi - lo) if hi > lo else torch.zeros_like(hm)
            hm = F.interpolate(hm[None, None], size=(h, w), mode="nearest")[0]
            panels.append(hm.expand(3, h, w))
        attn_path = out / f"sample_{i:03d}_attn.png"
        _to_pil(_hcat(panels)).save(attn_path)
        paths.append(attn_path)
    return paths
