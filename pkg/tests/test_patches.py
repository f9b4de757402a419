import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from percmae.exceptions import ConfigurationError
from percmae.patches import (
    MaskPlan,
    composite,
    full_visibility_plan,
    patchify,
    sample_mask,
    unpatchify,
)

from conftest import seeded


def test_patchify_shapes():
    assert patchify(torch.rand(1, 3, 32, 32), 16).tokens.shape == (1, 4, 768)
    assert patchify(torch.rand(2, 3, 64, 64), 16).tokens.shape == (2, 16, 768)
    # the full-scale configuration: 14x14 grid of 16x16 patches
    assert patchify(torch.rand(1, 3, 224, 224), 16).tokens.shape == (1, 196, 768)


def test_patchify_rejects_non_divisible():
    with pytest.raises(ConfigurationError):
        patchify(torch.rand(1, 3, 30, 30), 4)


def test_unpatchify_roundtrip():
    x = torch.rand(2, 3, 32, 32)
    assert torch.equal(unpatchify(patchify(x, 4)), x)


def test_unpatchify_zero_and_single_patch():
    zeros = patchify(torch.zeros(1, 3, 8, 8), 4)
    assert torch.equal(unpatchify(zeros), torch.zeros(1, 3, 8, 8))
    single = patchify(torch.rand(1, 3, 4, 4), 4)
    assert single.tokens.shape == (1, 1, 48)
    assert torch.equal(unpatchify(single), single.tokens.reshape(1, 4, 4, 3).permute(0, 3, 1, 2))


@settings(max_examples=60, deadline=None)
@given(
    b=st.integers(1, 3),
    c=st.integers(1, 4),
    gh=st.integers(1, 4),
    gw=st.integers(1, 4),
    p=st.integers(1, 6),
)
def test_roundtrip_property(b, c, gh, gw, p):
    x = torch.rand(b, c, gh * p, gw * p)
    assert torch.equal(unpatchify(patchify(x, p)), x)


def test_sample_mask_cardinalities():
    plan = sample_mask(196, 0.75, seeded(0))
    assert plan.masked_indices.shape == (1, 147)
    assert plan.visible_indices.shape == (1, 49)
    plan = sample_mask(4, 0.75, seeded(0))
    assert plan.masked_indices.shape[1] == 3


def test_sample_mask_determinism():
    a = sample_mask(64, 0.75, seeded(3), batch_size=2)
    b = sample_mask(64, 0.75, seeded(3), batch_size=2)
    assert torch.equal(a.masked_indices, b.masked_indices)
    assert torch.equal(a.visible_indices, b.visible_indices)


def test_sample_mask_rejects_bad_ratio():
    for ratio in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ConfigurationError):
            sample_mask(16, ratio, seeded(0))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 300), ratio=st.floats(0.05, 0.95))
def test_mask_partition_property(n, ratio):
    plan = sample_mask(n, ratio, seeded(1))
    assert plan.masked_indices.shape[1] == round(ratio * n)
    union = torch.cat([plan.masked_indices, plan.visible_indices], dim=1).sort(dim=1).values
    assert torch.equal(union, torch.arange(n).unsqueeze(0))


def test_plan_rejects_non_partition():
    with pytest.raises(ConfigurationError):
        MaskPlan(masked_indices=torch.tensor([[0, 1]]), visible_indices=torch.tensor([[1, 2]]))


def test_composite_extremes():
    orig = torch.rand(1, 3, 16, 16)
    pred = torch.rand(1, 3, 16, 16)
    n = 16
    all_masked = MaskPlan(
        masked_indices=torch.arange(n).unsqueeze(0),
        visible_indices=torch.zeros(1, 0, dtype=torch.long),
    )
    assert torch.equal(composite(orig, pred, all_masked), pred)
    none_masked = full_visibility_plan(n)
    assert torch.equal(composite(orig, pred, none_masked), orig)


def test_composite_checkerboard():
    # constant images a / b with a checkerboard plan give an exact two-valued board
    a, b = 0.25, 0.75
    orig = torch.full((1, 1, 8, 8), a)
    pred = torch.full((1, 1, 8, 8), b)
    grid = 4  # 4x4 patches of size 2
    masked = [i for i in range(16) if (i // grid + i % grid) % 2 == 0]
    visible = [i for i in range(16) if i not in masked]
    plan = MaskPlan(
        masked_indices=torch.tensor([masked]), visible_indices=torch.tensor([visible])
    )
    out = composite(orig, pred, plan)
    expected = torch.full((1, 1, 8, 8), a)
    for idx in masked:
        r, c = divmod(idx, grid)
        expected[:, :, 2 * r : 2 * r + 2, 2 * c : 2 * c + 2] = b
    assert torch.equal(out, expected)
    assert set(out.unique().tolist()) == {a, b}


def test_composite_shape_mismatch():
    plan = sample_mask(16, 0.5, seeded(0))
    with pytest.raises(ConfigurationError):
        composite(torch.rand(1, 3, 16, 16), torch.rand(1, 3, 8, 8), plan)
