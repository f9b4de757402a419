"""Pluggable loss-network interface for perceptual feature extraction.

Features can come from the adversarial discriminator or from an external
frozen convolutional network loaded from a checkpoint (the checkpoint's meta
dict records the architecture, so files are self-contained). The loss-network
parameters never receive gradients; gradients flow only into the image
argument.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint
from .exceptions import CheckpointError, ConfigurationError
from .losses.reconstruction import LossNetworkFeatures


@dataclass(frozen=True)
class LossNetworkSpec:
    kind: str = "discriminator"  # "discriminator" | "external"
    layer_taps: tuple[str, ...] = ()
    weights_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("discriminator", "external"):
            raise ConfigurationError(f"unknown loss-network kind {self.kind!r}")
        if self.kind == "external" and not self.weights_path:
            raise ConfigurationError("external loss network requires weights_path")
        object.__setattr__(self, "layer_taps", tuple(self.layer_taps))


class TapFeatureNet(nn.Module):
    """Small conv stack whose named stage outputs serve as feature taps."""

    def __init__(self, in_channels: int = 3, channels: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        self.in_channels = in_channels
        self.channels = tuple(channels)
        convs = []
        prev = in_channels
        for ch in self.channels:
            convs.append(nn.Conv2d(prev, ch, kernel_size=3, stride=2, padding=1))
            prev = ch
        self.convs = nn.ModuleList(convs)

    @property
    def tap_names(self) -> tuple[str, ...]:
        return tuple(f"stage{i}" for i in range(len(self.convs)))

    def forward(self, x: torch.Tensor) -> "OrderedDict[str, torch.Tensor]":
        taps = OrderedDict()
        for i, conv in enumerate(self.convs):
            x = F.leaky_relu(conv(x), 0.2)
            taps[f"stage{i}"] = x
        return taps


def seeded_feature_net(seed: int, in_channels: int = 3, channels=(16, 32, 64)) -> TapFeatureNet:
    """Deterministically initialized feature net, independent of global RNG."""
    net = TapFeatureNet(in_channels, channels)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in net.parameters():
            p.copy_(torch.randn(p.shape, generator=gen) * 0.2)
    net.requires_grad_(False)
    net.eval()
    return net


def save_feature_net(net: TapFeatureNet, path) -> None:
    meta = {
        "kind": "tap_feature_net",
        "in_channels": net.in_channels,
        "channels": list(net.channels),
    }
    checkpoint.save_arrays(path, checkpoint.module_arrays(net), meta)


def load_feature_net(path) -> TapFeatureNet:
    arrays, meta = checkpoint.load_arrays(path)
    if meta.get("kind") != "tap_feature_net":
        raise CheckpointError(f"{path} does not hold a loss-network checkpoint")
    net = TapFeatureNet(meta["in_channels"], tuple(meta["channels"]))
    checkpoint.load_module_arrays(net, arrays)
    net.requires_grad_(False)
    net.eval()
    return net


def _select_taps(taps: "OrderedDict[str, torch.Tensor]", wanted: tuple[str, ...]):
    if not wanted:
        return list(taps.values())
    available = list(taps)
    missing = [name for name in wanted if name not in taps]
    if missing:
        raise ConfigurationError(
            f"unknown tap name(s) {missing}; available taps: {available}"
        )
    return [taps[name] for name in wanted]


def extract_features(
    images: torch.Tensor,
    spec: LossNetworkSpec,
    discriminator: nn.Module | None = None,
    network: TapFeatureNet | None = None,
) -> LossNetworkFeatures:
    """Feature maps of the configured loss network for an image batch.

    Evaluation is frozen: parameters of the loss network get no gradient,
    while gradients still reach ``images``.
    """
    if spec.kind == "discriminator":
        if discriminator is None:
            raise ConfigurationError("discriminator-kind extraction needs a discriminator instance")
        flags = [p.requires_grad for p in discriminator.parameters()]
        discriminator.requires_grad_(False)
        try:
            features = discriminator(images).features
        finally:
            for p, flag in zip(discriminator.parameters(), flags):
                p.requires_grad_(flag)
        if spec.layer_taps:
            names = [f"block{i}" for i in range(len(features.layers))]
            taps = OrderedDict(zip(names, features.layers))
            return LossNetworkFeatures(layers=_select_taps(taps, spec.layer_taps))
        return features

    net = network if network is not None else load_feature_net(spec.weights_path)
    taps = net(images)
    return LossNetworkFeatures(layers=_select_taps(taps, spec.layer_taps))
