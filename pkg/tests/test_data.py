import pytest
import torch

from percmae.data import (
    AugmentPolicy,
    Normalization,
    apply_augment,
    denormalize,
    load_dataset,
    normalize,
    worker_generator,
)
from percmae.exceptions import ConfigurationError

from conftest import seeded, write_image_folder


def test_flat_dir_unlabeled(flat_image_folder):
    ds = load_dataset(flat_image_folder, "train", 32)
    assert len(ds) == 8
    assert ds.labels is None
    assert ds.class_names == []


def test_class_dirs(image_folder):
    ds = load_dataset(image_folder, "train", 32)
    assert len(ds) == 8
    assert ds.class_names == ["class_0", "class_1"]
    _, labels = ds.get_batch(range(8))
    assert sorted(labels.tolist()) == [0, 0, 0, 0, 1, 1, 1, 1]


def test_empty_dir_errors(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ConfigurationError, match="no samples"):
        load_dataset(empty, "train", 32)


def test_missing_root_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        load_dataset(tmp_path / "nope", "train", 32)


def test_unreadable_image_skipped(tmp_path, caplog):
    root = write_image_folder(tmp_path / "d", classes=0, per_class=4)
    (root / "broken.png").write_bytes(b"not a png at all")
    ds = load_dataset(root, "train", 32)
    assert len(ds) == 4


def test_all_unreadable_errors(tmp_path):
    root = tmp_path / "bad"
    root.mkdir()
    (root / "a.png").write_bytes(b"junk")
    (root / "b.jpg").write_bytes(b"junk")
    with pytest.raises(ConfigurationError, match="no samples"):
        load_dataset(root, "train", 32)


def test_split_subdirectory_layout(tmp_path):
    write_image_folder(tmp_path / "ds" / "train", classes=2, per_class=2)
    write_image_folder(tmp_path / "ds" / "val", classes=2, per_class=3)
    train = load_dataset(tmp_path / "ds", "train", 32)
    val = load_dataset(tmp_path / "ds", "val", 32)
    assert len(train) == 4 and len(val) == 6


def test_images_resized(image_folder):
    ds = load_dataset(image_folder, "train", 16)
    img = ds.image(0)
    assert img.shape == (3, 16, 16)
    assert 0.0 <= float(img.min()) and float(img.max()) <= 1.0


def test_normalize_roundtrip():
    norm = Normalization(mean=(0.4, 0.45, 0.5), std=(0.2, 0.25, 0.3))
    x = torch.rand(2, 3, 8, 8)
    back = denormalize(normalize(x, norm), norm)
    assert (back - x).abs().max() < 1e-6


def test_disabled_policy_is_pure_normalize():
    norm = Normalization.identity()
    policy = AugmentPolicy.disabled(norm)
    x = torch.rand(3, 3, 16, 16)
    assert torch.equal(apply_augment(x, policy, seeded(0)), x)


def test_forced_flip_is_exact_mirror():
    policy = AugmentPolicy(crop_enabled=False, hflip_prob=1.0, normalization=Normalization.identity())
    x = torch.rand(2, 3, 16, 16)
    assert torch.equal(apply_augment(x, policy, seeded(0)), x.flip(-1))


def test_augment_determinism():
    policy = AugmentPolicy(crop_enabled=True, crop_scale=(0.3, 1.0), hflip_prob=0.5)
    x = torch.rand(4, 3, 32, 32)
    a = apply_augment(x, policy, seeded(9))
    b = apply_augment(x, policy, seeded(9))
    assert torch.equal(a, b)


def test_augment_preserves_shape():
    policy = AugmentPolicy(crop_enabled=True, crop_scale=(0.2, 0.5), hflip_prob=1.0)
    x = torch.rand(2, 3, 32, 32)
    assert apply_augment(x, policy, seeded(1)).shape == x.shape


def test_policy_validation():
    with pytest.raises(ConfigurationError):
        AugmentPolicy(crop_scale=(0.0, 1.0))
    with pytest.raises(ConfigurationError):
        AugmentPolicy(hflip_prob=1.5)
    with pytest.raises(ConfigurationError):
        Normalization(std=(0.0, 1.0, 1.0))


def test_worker_generator_independence():
    a = torch.rand(4, generator=worker_generator(0, 0, 0))
    b = torch.rand(4, generator=worker_generator(0, 1, 0))
    c = torch.rand(4, generator=worker_generator(0, 0, 1))
    again = torch.rand(4, generator=worker_generator(0, 0, 0))
    assert torch.equal(a, again)
    assert not torch.equal(a, b)
    assert not torch.equal(a, c)
