from .reconstruction import (
    LossNetworkFeatures,
    LossWeights,
    ObjectiveResult,
    feature_matching_loss,
    generator_objective,
    gram,
    l1_loss,
    ms_ssim_loss,
    mse_loss,
    ssim_index,
)
from .adversarial import (
    AdaState,
    PathLengthState,
    ada_augment,
    ada_update,
    lsgan_d_loss,
    lsgan_g_loss,
    path_length_penalty,
)

__all__ = [
    "AdaState",
    "LossNetworkFeatures",
    "LossWeights",
    "ObjectiveResult",
    "PathLengthState",
    "ada_augment",
    "ada_update",
    "feature_matching_loss",
    "generator_objective",
    "gram",
    "l1_loss",
    "lsgan_d_loss",
    "lsgan_g_loss",
    "ms_ssim_loss",
    "mse_loss",
    "path_length_penalty",
    "ssim_index",
]
