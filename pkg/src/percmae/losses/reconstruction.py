"""Generator-side objective terms: pixel, structural-similarity, feature and
style matching losses, and their scheduled combinations."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from ..exceptions import ConfigurationError
from ..patches import MaskPlan, mask_to_pixels

VARIANTS = ("mse", "ms_ssim_l1", "gan_perceptual", "loss_network_perceptual")


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights for the combined generator objective.

    ``alpha`` trades the structural term against (1 - alpha) * L1;
    ``delta_f`` / ``delta_s`` scale the feature and style matching terms.
    When ``perceptual_even_epochs_only`` is set, the feature/style term is
    active only on even-numbered epochs.
    """

    alpha: float = 0.85
    delta_f: float = 0.05
    delta_s: float = 40.0
    perceptual_even_epochs_only: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.delta_f < 0 or self.delta_s < 0:
            raise ConfigurationError("feature/style weights must be non-negative")


@dataclass
class LossNetworkFeatures:
    """Ordered per-layer feature maps from a loss network.

    ``element_counts`` holds the per-sample element count of each layer and is
    derived from the shapes when omitted.
    """

    layers: list[torch.Tensor]
    element_counts: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ConfigurationError("need at least one feature layer")
        derived = [int(layer[0].numel()) for layer in self.layers]
        if not self.element_counts:
            self.element_counts = derived
        elif self.element_counts != derived:
            raise ConfigurationError(
                f"element counts {self.element_counts} disagree with layer shapes {derived}"
            )

    def __len__(self) -> int:
        return len(self.layers)


def _check_same_shape(pred: torch.Tensor, target: torch.Tensor):
    if pred.shape != target.shape:
        raise ConfigurationError(
            f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}"
        )


def l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all elements."""
    _check_same_shape(pred, target)
    return (pred - target).abs().mean()


def mse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _check_same_shape(pred, target)
    return ((pred - target) ** 2).mean()


def masked_pixel_loss(
    pred: torch.Tensor, target: torch.Tensor, plan: MaskPlan, patch_size: int, squared: bool = False
) -> torch.Tensor:
    """Pixel loss restricted to masked-patch locations."""
    _check_same_shape(pred, target)
    pix = mask_to_pixels(plan, pred.shape, patch_size).to(pred.device)
    diff = pred - target
    diff = diff**2 if squared else diff.abs()
    denom = pix.sum() * pred.shape[1]
    if denom == 0:
        return diff.sum() * 0.0
    return (diff * pix).sum() / denom


def norm_pix_pixel_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    patch_size: int,
    plan: MaskPlan | None = None,
    masked_only: bool = False,
    squared: bool = False,
) -> torch.Tensor:
    """Pixel loss against per-patch mean/std-normalized targets.

    Both images are patchified; the target tokens are normalized by their own
    per-patch statistics before comparison. Optionally restricted to masked
    patches.
    """
    from ..patches import patchify  # local import to avoid a cycle at load time

    _check_same_shape(pred, target)
    pred_tok = patchify(pred, patch_size).tokens
    tgt_tok = patchify(target, patch_size).tokens
    mean = tgt_tok.mean(dim=-1, keepdim=True)
    var = tgt_tok.var(dim=-1, keepdim=True)
    tgt_tok = (tgt_tok - mean) / (var + 1e-6).sqrt()
    diff = pred_tok - tgt_tok
    diff = diff**2 if squared else diff.abs()
    per_patch = diff.mean(dim=-1)
    if masked_only:
        if plan is None:
            raise ConfigurationError("masked-only pixel loss needs a mask plan")
        if plan.masked_indices.shape[1] == 0:
            return per_patch.sum() * 0.0
        per_patch = torch.gather(per_patch, 1, plan.masked_indices)
    return per_patch.mean()


def _box3(x: torch.Tensor) -> torch.Tensor:
    return F.avg_pool2d(x, kernel_size=3, stride=1)


def _ssim_map(x: torch.Tensor, y: torch.Tensor, max_value: float) -> torch.Tensor:
    """Local SSIM over valid 3x3 box windows; constants use the standard
    (0.01 L)^2 / (0.03 L)^2 stabilizers."""
    c1 = (0.01 * max_value) ** 2
    c2 = (0.03 * max_value) ** 2
    mx, my = _box3(x), _box3(y)
    sxx = _box3(x * x) - mx * mx
    syy = _box3(y * y) - my * my
    sxy = _box3(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim_index(pred: torch.Tensor, target: torch.Tensor, max_value: float = 1.0) -> torch.Tensor:
    """Mean single-scale SSIM in [-1, 1]; equals 1 only on identical inputs."""
    _check_same_shape(pred, target)
    if min(pred.shape[-2:]) < 3:
        raise ConfigurationError("ssim needs spatial dims of at least 3x3")
    return _ssim_map(pred, target, max_value).mean()


def ms_ssim_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    scales: int = 4,
    alpha: float = 0.85,
    max_value: float = 1.0,
) -> torch.Tensor:
    """alpha-weighted multi-scale (1 - SSIM)/2 with a 3x3 box filter.

    The map is averaged over pixels at each scale, then over the ``scales``
    levels produced by repeated 2x2 average pooling. Symmetric in its two
    arguments and zero exactly when they are identical.
    """
    _check_same_shape(pred, target)
    window = 3
    min_size = 2 ** (scales - 1) * window
    if min(pred.shape[-2:]) < min_size:
        raise ConfigurationError(
            f"inputs of size {tuple(pred.shape[-2:])} too small for {scales} scales; "
            f"need at least {min_size}x{min_size}"
        )
    x, y = pred, target
    per_scale = []
    for s in range(scales):
        per_scale.append(((1 - _ssim_map(x, y, max_value)) / 2).mean())
        if s < scales - 1:
            x = F.avg_pool2d(x, 2)
            y = F.avg_pool2d(y, 2)
    return alpha * torch.stack(per_scale).mean()


def gram(features: torch.Tensor) -> torch.Tensor:
    """Channel-correlation (Gram) matrices, normalized by C*H*W.

    Input is B x C x H x W; output B x C x C, symmetric PSD.
    """
    if features.dim() != 4:
        raise ConfigurationError(f"gram expects B x C x H x W features, got {tuple(features.shape)}")
    b, c, h, w = features.shape
    flat = features.reshape(b, c, h * w)
    return flat @ flat.transpose(1, 2) / (c * h * w)


def feature_matching_loss(
    f_pred: LossNetworkFeatures, f_real: LossNetworkFeatures, weights: LossWeights
) -> torch.Tensor:
    """Feature + style reconstruction loss over matched loss-network layers.

    Per layer j with N_j per-sample elements:
    delta_f * |phi_j(pred) - phi_j(real)|_1 / N_j
    + delta_s * |gram(phi_j(pred)) - gram(phi_j(real))|_1 / N_j,
    summed over layers, L1 sums taken per sample and averaged over the batch.
    """
    if len(f_pred) != len(f_real):
        raise ConfigurationError(
            f"feature layer count mismatch: {len(f_pred)} vs {len(f_real)}"
        )
    total = None
    for lp, lr, n in zip(f_pred.layers, f_real.layers, f_pred.element_counts):
        if lp.shape != lr.shape:
            raise ConfigurationError(
                f"feature layer shape mismatch: {tuple(lp.shape)} vs {tuple(lr.shape)}"
            )
        term = weights.delta_f * (lp - lr).abs().flatten(1).sum(dim=1).mean() / n
        if weights.delta_s > 0:
            gp, gr = gram(lp), gram(lr)
            term = term + weights.delta_s * (gp - gr).abs().flatten(1).sum(dim=1).mean() / n
        total = term if total is None else total + term
    return total


@dataclass
class ObjectiveResult:
    """Combined generator loss with its per-term breakdown.

    ``terms`` maps each named term to its (weighted) contribution; names in
    ``skipped`` were scheduled off this epoch and contributed exactly zero.
    """

    total: torch.Tensor
    terms: dict[str, float]
    skipped: tuple[str, ...] = ()


def generator_objective(
    variant: str,
    pred: torch.Tensor,
    target: torch.Tensor,
    weights: LossWeights,
    epoch: int = 0,
    pred_features: LossNetworkFeatures | None = None,
    real_features: LossNetworkFeatures | None = None,
    fake_scores: torch.Tensor | None = None,
    plan: MaskPlan | None = None,
    l1_masked_only: bool = False,
    norm_pix_targets: bool = False,
    patch_size: int | None = None,
    max_value: float = 1.0,
) -> ObjectiveResult:
    """Assemble the scheduled generator objective for one of the variants.

    ``gan_perceptual`` needs loss-network features for both images plus the
    discriminator scores of the generated batch; ``loss_network_perceptual``
    needs the features only. The feature/style term obeys the even-epoch
    schedule encoded in ``weights``. ``l1_masked_only`` restricts the pixel
    term to masked patches; ``norm_pix_targets`` swaps its target for
    per-patch-normalized pixels (both off by default: the pixel term compares
    the full reconstruction against the raw image).
    """
    from .adversarial import lsgan_g_loss  # local import to avoid a cycle

    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown objective variant {variant!r}; choose from {VARIANTS}")

    def pixel_term(squared: bool) -> torch.Tensor:
        if norm_pix_targets:
            if patch_size is None:
                raise ConfigurationError("normalized-patch pixel loss needs a patch size")
            return norm_pix_pixel_loss(
                pred, target, patch_size, plan=plan, masked_only=l1_masked_only, squared=squared
            )
        if l1_masked_only:
            if plan is None or patch_size is None:
                raise ConfigurationError("masked-only pixel loss needs a mask plan and patch size")
            return masked_pixel_loss(pred, target, plan, patch_size, squared=squared)
        return mse_loss(pred, target) if squared else l1_loss(pred, target)

    if variant == "mse":
        total = pixel_term(squared=True)
        return ObjectiveResult(total=total, terms={"mse": float(total.detach())})

    if variant == "ms_ssim_l1":
        l1 = (1.0 - weights.alpha) * pixel_term(squared=False)
        ssim_term = ms_ssim_loss(pred, target, alpha=weights.alpha, max_value=max_value)
        total = l1 + ssim_term
        return ObjectiveResult(
            total=total,
            terms={"l1": float(l1.detach()), "ms_ssim": float(ssim_term.detach())},
        )

    feat_active = (not weights.perceptual_even_epochs_only) or (epoch % 2 == 0)
    l1 = pixel_term(squared=False)
    terms: dict[str, float] = {"l1": float(l1.detach())}
    skipped: tuple[str, ...] = ()
    total = l1
    if feat_active:
        if pred_features is None or real_features is None:
            raise ConfigurationError(f"variant {variant!r} requires loss-network features")
        feat = feature_matching_loss(pred_features, real_features, weights)
        total = total + feat
        terms["feat"] = float(feat.detach())
    else:
        terms["feat"] = 0.0
        skipped = ("feat",)

    if variant == "gan_perceptual":
        if fake_scores is None:
            raise ConfigurationError("gan_perceptual requires discriminator scores for the fakes")
        adv = lsgan_g_loss(fake_scores)
        total = total + adv
        terms["adv_g"] = float(adv.detach())

    return ObjectiveResult(total=total, terms=terms, skipped=skipped)
