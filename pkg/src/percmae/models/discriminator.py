"""Strided convolutional discriminator with optional multi-resolution inputs.

In multi-scale mode each pyramid level is concatenated channel-wise into the
block whose input resolution matches it (finest first), so gradients reach
the generator at every scale. Block activations double as the loss-network
feature taps used for perceptual feature matching.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..exceptions import ConfigurationError
from ..losses.reconstruction import LossNetworkFeatures


@dataclass(frozen=True)
class DiscriminatorConfig:
    base_channels: int = 32
    num_blocks: int = 3
    multi_scale: bool = False
    input_resolutions: tuple[int, ...] = (32,)
    in_channels: int = 3
    max_channels: int = 256

    def __post_init__(self):
        object.__setattr__(self, "input_resolutions", tuple(int(r) for r in self.input_resolutions))
        if self.num_blocks < 1:
            raise ConfigurationError("discriminator needs at least one block")
        if not self.input_resolutions:
            raise ConfigurationError("at least one input resolution is required")
        res = self.input_resolutions
        for a, b in zip(res, res[1:]):
            if b * 2 != a:
                raise ConfigurationError(f"input resolutions must halve, finest first: {res}")
        if self.multi_scale and len(res) > self.num_blocks:
            raise ConfigurationError(
                f"{len(res)} input taps need at least that many blocks, have {self.num_blocks}"
            )
        if res[0] % (2**self.num_blocks) != 0:
            raise ConfigurationError(
                f"resolution {res[0]} not divisible by 2^{self.num_blocks} block halvings"
            )


@dataclass
class DiscriminatorOutput:
    score: torch.Tensor
    features: LossNetworkFeatures


class Discriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        taps = len(cfg.input_resolutions) if cfg.multi_scale else 1
        self.num_taps = taps
        channels = [min(cfg.base_channels * 2**i, cfg.max_channels) for i in range(cfg.num_blocks)]
        convs = []
        prev = 0
        for i in range(cfg.num_blocks):
            in_ch = prev + (cfg.in_channels if i < taps else 0)
            convs.append(nn.Conv2d(in_ch, channels[i], kernel_size=3, stride=2, padding=1))
            prev = channels[i]
        self.convs = nn.ModuleList(convs)
        final = cfg.input_resolutions[0] // 2**cfg.num_blocks
        self.score_head = nn.Linear(channels[-1] * final * final, 1)

    def forward(self, images) -> DiscriminatorOutput:
        pyramid = [images] if isinstance(images, torch.Tensor) else list(images)
        expected = self.num_taps
        if len(pyramid) != expected:
            raise ConfigurationError(
                f"discriminator expects {expected} input scale(s), got {len(pyramid)}"
            )
        for level, res in zip(pyramid, self.cfg.input_resolutions):
            if level.shape[-1] != res or level.shape[-2] != res:
                raise ConfigurationError(
                    f"pyramid level of shape {tuple(level.shape)} does not match "
                    f"configured resolution {res}"
                )
        x = None
        feats = []
        for i, conv in enumerate(self.convs):
            if i < len(pyramid):
                x = pyramid[i] if x is None else torch.cat([x, pyramid[i]], dim=1)
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(x)
        score = self.score_head(x.flatten(1)).squeeze(-1)
        return DiscriminatorOutput(score=score, features=LossNetworkFeatures(layers=feats))


def image_pyramid(images: torch.Tensor, resolutions) -> list[torch.Tensor]:
    """Downsample real images to each requested resolution by average pooling."""
    out = []
    for res in resolutions:
        if images.shape[-1] == res:
            out.append(images)
        else:
            if images.shape[-1] % res != 0:
                raise ConfigurationError(
                    f"cannot pool {images.shape[-1]} px down to {res} px evenly"
                )
            out.append(F.avg_pool2d(images, images.shape[-1] // res))
    return out
