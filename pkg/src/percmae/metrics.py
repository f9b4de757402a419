"""Reconstruction-quality metrics: PSNR, SSIM, Inception-style score, and the
Frechet distance between embedding sets."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .exceptions import ConfigurationError
from .losses.reconstruction import ssim_index

PSNR_CAP_DB = 99.0


def psnr(pred: torch.Tensor, target: torch.Tensor, max_value: float = 1.0) -> float:
    """10 * log10(max^2 / MSE) in dB; identical inputs report the 99 dB cap."""
    if pred.shape != target.shape:
        raise ConfigurationError(
            f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}"
        )
    mse = float(((pred - target) ** 2).double().mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(max_value**2 / mse), PSNR_CAP_DB)


@dataclass
class EmbeddingSet:
    """M x d embedding vectors with a provenance tag for the embedder used."""

    vectors: np.ndarray
    source: str = "unknown"

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 2:
            raise ConfigurationError("embedding set must be M x d with M >= 2")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _stats(emb: EmbeddingSet) -> tuple[np.ndarray, np.ndarray]:
    v = emb.vectors
    mu = v.mean(axis=0)
    cov = np.cov(v, rowvar=False)
    cov = np.atleast_2d(cov)
    if v.shape[0] < v.shape[1] + 1 or not np.isfinite(cov).all():
        warnings.warn(
            f"covariance of {emb.source!r} set is degenerate "
            f"({v.shape[0]} samples, dim {v.shape[1]}); regularizing with 1e-6 * I",
            RuntimeWarning,
            stacklevel=3,
        )
        cov = np.nan_to_num(cov) + 1e-6 * np.eye(v.shape[1])
    return mu, cov


def compute_fid(a: EmbeddingSet, b: EmbeddingSet) -> float:
    """Frechet distance between Gaussians fitted to the two embedding sets.

    The cross-covariance square root uses an eigendecomposition of the
    symmetrized product sqrt(Sa) Sb sqrt(Sa), which is deterministic and
    exactly symmetric in (a, b) up to rounding.
    """
    if a.dim != b.dim:
        raise ConfigurationError(f"embedding dims differ: {a.dim} vs {b.dim}")
    mu_a, cov_a = _stats(a)
    mu_b, cov_b = _stats(b)
    diff = mu_a - mu_b
    root_a = _sqrt_psd(cov_a)
    inner = root_a @ cov_b @ root_a
    inner = (inner + inner.T) / 2.0
    vals = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    trace_sqrt = float(np.sqrt(vals).sum())
    fid = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)
    return max(fid, 0.0)


def compute_is(probs, splits: int = 4) -> tuple[float, float]:
    """exp(mean KL(p(y|x) || p(y))) per split, returned as (mean, std)."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ConfigurationError("probabilities must be an M x K matrix")
    if (p < -1e-8).any():
        raise ConfigurationError("probabilities must be non-negative")
    row_sums = p.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-5:
        raise ConfigurationError("probability rows must sum to 1 within 1e-5")
    if splits < 1 or p.shape[0] < splits:
        raise ConfigurationError(f"cannot split {p.shape[0]} rows into {splits} parts")
    scores = []
    for chunk in np.array_split(p, splits):
        marginal = chunk.mean(axis=0)
        logs = np.where(chunk > 0, np.log(np.where(chunk > 0, chunk, 1.0)) - np.log(marginal), 0.0)
        kl = (chunk * logs).sum(axis=1)
        scores.append(float(np.exp(kl.mean())))
    scores = np.asarray(scores)
    return float(scores.mean()), float(scores.std())


@dataclass
class MetricsReport:
    """One evaluation row: the five reconstruction metrics plus provenance.

    ``embedder_id`` records how the embeddings behind IS/FID were produced;
    values from different embedders are not comparable.
    """

    l1: float
    psnr: float
    ssim: float
    is_mean: float
    is_std: float
    fid: float
    sample_count: int
    embedder_id: str

    def __post_init__(self):
        if self.sample_count <= 0:
            raise ConfigurationError("report needs at least one sample")
        if self.fid < 0 or self.is_mean < 1.0 - 1e-9:
            raise ConfigurationError("fid must be >= 0 and inception-style score >= 1")

    def to_json(self) -> str:
        return json.dumps(
            {
                "l1": self.l1,
                "psnr": self.psnr,
                "ssim": self.ssim,
                "is_mean": self.is_mean,
                "is_std": self.is_std,
                "fid": self.fid,
                "sample_count": self.sample_count,
                "embedder_id": self.embedder_id,
            },
            indent=2,
            sort_keys=True,
        )

    def to_table(self) -> str:
        header = f"{'L1':>8}  {'PSNR':>8}  {'SSIM':>8}  {'IS':>16}  {'FID':>10}"
        is_col = f"{self.is_mean:.3f} +/- {self.is_std:.3f}"
        row = (
            f"{self.l1:>8.4f}  {self.psnr:>8.2f}  {self.ssim:>8.4f}  "
            f"{is_col:>16}  {self.fid:>10.4f}"
        )
        footer = f"samples: {self.sample_count}   embedder: {self.embedder_id}"
        return "\n".join([header, row, footer])


def ssim_metric(pred: torch.Tensor, target: torch.Tensor, max_value: float = 1.0) -> float:
    return float(ssim_index(pred, target, max_value=max_value))


def save_embeddings(emb: EmbeddingSet, path):
    """Export an embedding set in the manifest+blob checkpoint format."""
    from . import checkpoint

    return checkpoint.save_arrays(
        path, {"vectors": emb.vectors}, meta={"kind": "embedding_set", "source": emb.source}
    )


def load_embeddings(path) -> EmbeddingSet:
    from . import checkpoint
    from .exceptions import CheckpointError

    arrays, meta = checkpoint.load_arrays(path)
    if meta.get("kind") != "embedding_set" or "vectors" not in arrays:
        raise CheckpointError(f"{path} does not hold an embedding set")
    return EmbeddingSet(vectors=arrays["vectors"], source=meta.get("source", "file"))
