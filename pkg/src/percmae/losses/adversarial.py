"""Least-squares adversarial losses, adaptive discriminator augmentation, and
path-length regularization."""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch

from ..exceptions import ConfigurationError
from .reconstruction import LossNetworkFeatures

ADA_OPS = ("hflip", "rot90", "translate", "jitter")


def lsgan_d_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """0.5 * mean[(D(real) - 1)^2] + 0.5 * mean[D(fake)^2]."""
    return 0.5 * ((d_real - 1.0) ** 2).mean() + 0.5 * (d_fake**2).mean()


def lsgan_g_loss(d_fake: torch.Tensor) -> torch.Tensor:
    """0.5 * mean[(D(fake) - 1)^2]."""
    return 0.5 * ((d_fake - 1.0) ** 2).mean()


@dataclass(frozen=True)
class AdaState:
    """Feedback controller for the discriminator augmentation probability.

    Scores accumulate per batch; every ``window`` batches the mean sign of the
    real scores becomes ``rt_estimate`` and ``p`` moves up or down by ``step``,
    clamped to [0, 1].
    """

    p: float = 0.0
    target: float = 0.6
    step: float = 0.005
    window: int = 4
    rt_estimate: float = 0.0
    acc_sum: float = 0.0
    acc_count: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ConfigurationError(f"augmentation probability must be in [0, 1], got {self.p}")
        if not 0.0 < self.target < 1.0:
            raise ConfigurationError(f"target must sit in (0, 1), got {self.target}")
        if self.window < 1:
            raise ConfigurationError("window must be at least one batch")


def ada_update(state: AdaState, d_real_scores: torch.Tensor) -> AdaState:
    """Fold one batch of real scores into the controller."""
    batch_sign = torch.sign(d_real_scores.detach().float()).mean().item()
    acc_sum = state.acc_sum + batch_sign
    acc_count = state.acc_count + 1
    if acc_count < state.window:
        return replace(state, acc_sum=acc_sum, acc_count=acc_count)
    rt = acc_sum / acc_count
    p = state.p + state.step if rt > state.target else state.p - state.step
    p = min(1.0, max(0.0, p))
    return replace(state, p=p, rt_estimate=rt, acc_sum=0.0, acc_count=0)


@dataclass
class AugmentParams:
    """Sampled per-image augmentation realization (neutral where untriggered)."""

    flip: torch.Tensor  # bool (B,)
    rot_k: torch.Tensor  # long (B,), 0 = none
    shift: torch.Tensor  # long (B, 2) = (dy, dx), zeros = none
    jitter: torch.Tensor  # bool (B,)
    brightness: torch.Tensor  # float (B,)
    contrast: torch.Tensor  # float (B,)


def sample_augment_params(
    batch: int,
    p: float,
    width: int,
    rng: torch.Generator,
    ops: tuple[str, ...] = ADA_OPS,
) -> AugmentParams:
    for op in ops:
        if op not in ADA_OPS:
            raise ConfigurationError(f"unknown augmentation op {op!r}; choose from {ADA_OPS}")

    def trigger() -> torch.Tensor:
        return torch.rand(batch, generator=rng) < p

    flip = trigger() if "hflip" in ops else torch.zeros(batch, dtype=torch.bool)
    if "rot90" in ops:
        k = torch.randint(1, 4, (batch,), generator=rng)
        rot_k = torch.where(trigger(), k, torch.zeros_like(k))
    else:
        rot_k = torch.zeros(batch, dtype=torch.long)
    if "translate" in ops:
        limit = max(1, width // 8)
        shift = torch.randint(-limit, limit + 1, (batch, 2), generator=rng)
        shift = torch.where(trigger().unsqueeze(1), shift, torch.zeros_like(shift))
    else:
        shift = torch.zeros(batch, 2, dtype=torch.long)
    if "jitter" in ops:
        jitter = trigger()
        brightness = (torch.rand(batch, generator=rng) * 2 - 1) * 0.2
        contrast = 1.0 + (torch.rand(batch, generator=rng) * 2 - 1) * 0.25
    else:
        jitter = torch.zeros(batch, dtype=torch.bool)
        brightness = torch.zeros(batch)
        contrast = torch.ones(batch)
    return AugmentParams(flip, rot_k, shift, jitter, brightness, contrast)


def apply_augment_params(images: torch.Tensor, params: AugmentParams) -> torch.Tensor:
    """Apply a sampled realization; differentiable w.r.t. the images and an
    exact identity wherever nothing triggered."""
    b = images.shape[0]
    rows = []
    for i in range(b):
        img = images[i]
        if bool(params.flip[i]):
            img = img.flip(-1)
        k = int(params.rot_k[i])
        if k:
            img = torch.rot90(img, k, dims=(1, 2))
        dy, dx = int(params.shift[i, 0]), int(params.shift[i, 1])
        if dy or dx:
            img = torch.roll(img, shifts=(dy, dx), dims=(1, 2))
        rows.append(img)
    out = torch.stack(rows)
    if bool(params.jitter.any()):
        mean = out.mean(dim=(1, 2, 3), keepdim=True)
        contrast = params.contrast.to(out.dtype).view(b, 1, 1, 1)
        brightness = params.brightness.to(out.dtype).view(b, 1, 1, 1)
        jittered = (out - mean) * contrast + mean + brightness
        out = torch.where(params.jitter.view(b, 1, 1, 1), jittered, out)
    return out


def ada_augment(
    images: torch.Tensor,
    state: AdaState,
    rng: torch.Generator,
    ops: tuple[str, ...] = ADA_OPS,
) -> torch.Tensor:
    """Apply each pipeline op independently with probability ``state.p``."""
    if images.shape[-1] != images.shape[-2] and "rot90" in ops:
        raise ConfigurationError("rot90 augmentation requires square images")
    params = sample_augment_params(images.shape[0], state.p, images.shape[-1], rng, ops)
    return apply_augment_params(images, params)


@dataclass(frozen=True)
class PathLengthState:
    """EMA of observed Jacobian norms plus the penalty coefficient."""

    ema_a: float = 0.0
    decay: float = 0.99
    weight: float = 2.0

    def __post_init__(self):
        if self.ema_a < 0:
            raise ConfigurationError("running norm average cannot be negative")
        if not 0.0 < self.decay < 1.0:
            raise ConfigurationError(f"decay must be in (0, 1), got {self.decay}")


def path_length_penalty(
    decoder_input_tokens: torch.Tensor,
    disc_features: LossNetworkFeatures,
    state: PathLengthState,
    rng: torch.Generator | None = None,
) -> tuple[torch.Tensor, PathLengthState]:
    """Penalize deviation of ||J^T y|| from its running mean.

    ``y`` is a per-sample unit random projection of the deepest discriminator
    feature layer; J is the Jacobian of that layer with respect to the
    decoder input tokens. Returns the weighted penalty and the updated state.
    """
    feat = disc_features.layers[-1]
    y = torch.randn(feat.shape, generator=rng, dtype=feat.dtype, device=feat.device)
    norms_y = y.flatten(1).norm(dim=1).clamp_min(1e-12)
    y = y / norms_y.view(-1, *([1] * (feat.dim() - 1)))
    projected = (feat * y).sum()
    if projected.requires_grad:
        grads = torch.autograd.grad(
            projected, decoder_input_tokens, create_graph=True, allow_unused=True
        )[0]
    else:  # feature map is constant in the decoder input
        grads = None
    if grads is None:
        norms = torch.zeros(feat.shape[0], dtype=feat.dtype, device=feat.device)
    else:
        norms = grads.flatten(1).norm(dim=1)
    penalty = state.weight * ((norms - state.ema_a) ** 2).mean()
    new_ema = state.decay * state.ema_a + (1.0 - state.decay) * float(norms.detach().mean())
    return penalty, replace(state, ema_a=new_ema)
