"""Masked-autoencoder pretraining with perceptual and adversarial objectives."""

from .config import RunConfig, load_config, save_config
from .data import (
    ArrayDataset,
    AugmentPolicy,
    ImageFolderDataset,
    Normalization,
    apply_augment,
    denormalize,
    load_dataset,
    normalize,
)
from .evaluation import ConvEmbedder, IdentityOracle, evaluate_reconstruction, render_outputs
from .exceptions import CheckpointError, ConfigurationError, NonFiniteLossError, PercmaeError
from .loss_network import LossNetworkSpec, extract_features
from .losses import (
    AdaState,
    LossNetworkFeatures,
    LossWeights,
    PathLengthState,
    ada_augment,
    ada_update,
    feature_matching_loss,
    generator_objective,
    gram,
    l1_loss,
    lsgan_d_loss,
    lsgan_g_loss,
    ms_ssim_loss,
    path_length_penalty,
)
from .metrics import EmbeddingSet, MetricsReport, compute_fid, compute_is, psnr
from .models import (
    DecoderConfig,
    Discriminator,
    DiscriminatorConfig,
    EncoderConfig,
    MaskedAutoencoder,
)
from .patches import MaskPlan, composite, patchify, sample_mask, unpatchify
from .training import Trainer, finetune_classifier, linear_probe, pretrain

__version__ = "0.1.0"
