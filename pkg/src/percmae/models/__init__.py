from .mae import (
    AttentionMaps,
    DecoderConfig,
    EncoderConfig,
    MaskedAutoencoder,
    ReconstructionBundle,
)
from .discriminator import Discriminator, DiscriminatorConfig, DiscriminatorOutput, image_pyramid

__all__ = [
    "AttentionMaps",
    "DecoderConfig",
    "Discriminator",
    "DiscriminatorConfig",
    "DiscriminatorOutput",
    "EncoderConfig",
    "MaskedAutoencoder",
    "ReconstructionBundle",
    "image_pyramid",
]
