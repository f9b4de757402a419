"""Analytic gradients versus central finite differences (float64 inputs)."""

import torch
import torch.nn.functional as F

from percmae.losses import (
    LossNetworkFeatures,
    LossWeights,
    PathLengthState,
    feature_matching_loss,
    l1_loss,
    lsgan_g_loss,
    ms_ssim_loss,
    path_length_penalty,
)

from gradcheck import FD_STEP, check_against_fd, rand64


def test_ms_ssim_gradients():
    target = rand64(1, 3, 24, 24, seed=1)
    x = rand64(1, 3, 24, 24, seed=2)
    check_against_fd(lambda t: ms_ssim_loss(t, target, scales=4, alpha=0.85), x, seed=3)


def test_feature_matching_gradients_through_gram():
    w = LossWeights(delta_f=0.05, delta_s=40.0)
    real = rand64(1, 3, 24, 24, seed=4)
    x = rand64(1, 3, 24, 24, seed=5)

    def fn(t):
        return feature_matching_loss(
            LossNetworkFeatures(layers=[t]), LossNetworkFeatures(layers=[real]), w
        )

    check_against_fd(fn, x, seed=6)


def test_lsgan_g_gradients():
    x = rand64(1, 3, 24, 24, seed=7) * 2 - 1
    check_against_fd(lsgan_g_loss, x, seed=8)


def path_length_toy_fn(state=None, seed=9, rng_seed=33):
    """Nonlinear toy generator so the Jacobian norm depends on the input."""
    gen = torch.Generator().manual_seed(seed)
    w1 = torch.randn(4, 3, 3, 3, generator=gen, dtype=torch.float64) * 0.5
    w2 = torch.randn(2, 4, 3, 3, generator=gen, dtype=torch.float64) * 0.5
    state = state or PathLengthState(ema_a=0.3, decay=0.99, weight=2.0)

    def fn(t):
        z = t if t.requires_grad else t.clone().requires_grad_(True)
        feat = F.conv2d(torch.tanh(F.conv2d(z, w1, stride=2, padding=1)), w2, stride=2, padding=1)
        rng = torch.Generator().manual_seed(rng_seed)
        penalty, _ = path_length_penalty(z, LossNetworkFeatures(layers=[feat]), state, rng)
        return penalty

    return fn


def test_path_length_penalty_gradients():
    x = rand64(1, 3, 24, 24, seed=10)
    check_against_fd(path_length_toy_fn(), x, seed=11)


def test_l1_gradient_off_kinks():
    target = rand64(1, 3, 24, 24, seed=12)
    x = rand64(1, 3, 24, 24, seed=13)
    # keep every coordinate away from the |.| kink by at least the fd step
    x = torch.where((x - target).abs() < 10 * FD_STEP, x + 0.01, x)
    check_against_fd(lambda t: l1_loss(t, target), x, seed=14)
