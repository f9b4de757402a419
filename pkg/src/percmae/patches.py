"""Image <-> patch-token conversion, random masking, and reassembly."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .exceptions import ConfigurationError


@dataclass
class PatchSequence:
    """Flattened non-overlapping patches: ``tokens`` is B x N x (P*P*C)."""

    tokens: torch.Tensor
    patch_size: int
    grid: tuple[int, int]

    @property
    def num_patches(self) -> int:
        return self.grid[0] * self.grid[1]


@dataclass
class MaskPlan:
    """Per-image partition of patch indices into masked and visible sets.

    Index tensors have shape (B, M) and (B, V); every image masks the same
    number of patches. Indices are kept sorted so that masking has set
    semantics: plans built from permuted index lists are equivalent.
    """

    masked_indices: torch.Tensor
    visible_indices: torch.Tensor
    ratio: float = field(default=0.0)

    def __post_init__(self):
        self.masked_indices = torch.as_tensor(self.masked_indices, dtype=torch.long)
        self.visible_indices = torch.as_tensor(self.visible_indices, dtype=torch.long)
        if self.masked_indices.dim() == 1:
            self.masked_indices = self.masked_indices.unsqueeze(0)
        if self.visible_indices.dim() == 1:
            self.visible_indices = self.visible_indices.unsqueeze(0)
        self.masked_indices = self.masked_indices.sort(dim=1).values
        self.visible_indices = self.visible_indices.sort(dim=1).values
        n = self.num_patches
        union = torch.cat([self.masked_indices, self.visible_indices], dim=1).sort(dim=1).values
        expected = torch.arange(n).expand(union.shape[0], n)
        if not torch.equal(union, expected):
            raise ConfigurationError("masked and visible indices must partition 0..N-1")

    @property
    def num_patches(self) -> int:
        return self.masked_indices.shape[1] + self.visible_indices.shape[1]

    @property
    def batch_size(self) -> int:
        return self.masked_indices.shape[0]


def patchify(images: torch.Tensor, patch_size: int) -> PatchSequence:
    """Split B x C x H x W images into the B x N x (P*P*C) token sequence."""
    if images.dim() != 4:
        raise ConfigurationError(f"expected a 4D image batch, got shape {tuple(images.shape)}")
    b, c, h, w = images.shape
    p = patch_size
    if p <= 0 or h % p != 0 or w % p != 0:
        raise ConfigurationError(f"image dims {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    x = images.reshape(b, c, gh, p, gw, p)
    x = torch.einsum("nchpwq->nhwpqc", x)
    tokens = x.reshape(b, gh * gw, p * p * c)
    return PatchSequence(tokens=tokens, patch_size=p, grid=(gh, gw))


def tokens_to_images(
    tokens: torch.Tensor, patch_size: int, grid: tuple[int, int], channels: int
) -> torch.Tensor:
    """Inverse of the patchify reshape for a raw token tensor."""
    b, n, dim = tokens.shape
    gh, gw = grid
    p = patch_size
    if n != gh * gw or dim != p * p * channels:
        raise ConfigurationError(
            f"token tensor {tuple(tokens.shape)} inconsistent with grid {grid}, "
            f"patch size {p}, channels {channels}"
        )
    x = tokens.reshape(b, gh, gw, p, p, channels)
    x = torch.einsum("nhwpqc->nchpwq", x)
    return x.reshape(b, channels, gh * p, gw * p)


def unpatchify(seq: PatchSequence) -> torch.Tensor:
    """Exact inverse of :func:`patchify`."""
    dim = seq.tokens.shape[-1]
    p2 = seq.patch_size * seq.patch_size
    if dim % p2 != 0:
        raise ConfigurationError(f"token dim {dim} is not a multiple of patch_size^2 = {p2}")
    return tokens_to_images(seq.tokens, seq.patch_size, seq.grid, dim // p2)


def sample_mask(
    num_patches: int,
    ratio: float,
    rng: torch.Generator,
    batch_size: int = 1,
) -> MaskPlan:
    """Uniformly sample ``round(ratio * N)`` masked patch indices per image.

    The count uses Python round() semantics (ties to even); deterministic
    under the supplied generator.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigurationError(f"mask ratio must be in (0, 1), got {ratio}")
    if num_patches < 2:
        raise ConfigurationError(f"need at least 2 patches to mask, got {num_patches}")
    num_masked = int(round(ratio * num_patches))
    masked, visible = [], []
    for _ in range(batch_size):
        perm = torch.randperm(num_patches, generator=rng)
        masked.append(perm[:num_masked])
        visible.append(perm[num_masked:])
    return MaskPlan(
        masked_indices=torch.stack(masked),
        visible_indices=torch.stack(visible),
        ratio=ratio,
    )


def full_visibility_plan(num_patches: int, batch_size: int = 1) -> MaskPlan:
    """Degenerate plan with nothing masked (probe / attention extraction)."""
    return MaskPlan(
        masked_indices=torch.zeros(batch_size, 0, dtype=torch.long),
        visible_indices=torch.arange(num_patches).expand(batch_size, num_patches),
        ratio=0.0,
    )


def mask_to_pixels(plan: MaskPlan, image_shape, patch_size: int | None = None) -> torch.Tensor:
    """Boolean B x 1 x H x W map, True over masked-patch pixels."""
    b, _, h, w = image_shape
    n = plan.num_patches
    if patch_size is None:
        side = int(round(n**0.5))
        if side * side != n or h % side != 0 or w % side != 0:
            raise ConfigurationError(
                f"cannot infer patch size for {h}x{w} image with {n} patches; pass patch_size"
            )
        patch_size = h // side
    gh, gw = h // patch_size, w // patch_size
    if gh * gw != n:
        raise ConfigurationError(f"plan with {n} patches does not tile a {h}x{w} image")
    flags = torch.zeros(b, n, dtype=torch.bool)
    if plan.masked_indices.shape[1] > 0:
        flags.scatter_(1, plan.masked_indices, True)
    pix = flags.reshape(b, 1, gh, gw)
    pix = pix.repeat_interleave(patch_size, dim=2).repeat_interleave(patch_size, dim=3)
    return pix


def composite(
    original: torch.Tensor,
    predicted: torch.Tensor,
    plan: MaskPlan,
    patch_size: int | None = None,
) -> torch.Tensor:
    """Paste predicted pixels into masked patch locations, original elsewhere."""
    if original.shape != predicted.shape:
        raise ConfigurationError(
            f"shape mismatch: original {tuple(original.shape)} vs predicted {tuple(predicted.shape)}"
        )
    if original.shape[0] != plan.batch_size:
        raise ConfigurationError("batch size of images and mask plan differ")
    pix = mask_to_pixels(plan, original.shape, patch_size)
    return torch.where(pix, predicted, original)
