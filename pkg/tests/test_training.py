import json
import math

import pytest
import torch

from percmae.config import OptimizerConfig
from percmae.exceptions import ConfigurationError, NonFiniteLossError
from percmae.data import synthetic_color_dataset
from percmae.training import (
    Trainer,
    finetune_classifier,
    linear_probe,
    load_pretrained,
    lr_at_epoch,
    param_checksum,
    pretrain,
)

from conftest import tiny_run_config


@pytest.fixture(scope="module")
def dataset24():
    return synthetic_color_dataset(2, 12, image_size=32, seed=0)


def test_lr_schedule_contract():
    cfg = OptimizerConfig(lr=3e-4, warmup_epochs=5)
    total = 20
    # linear ramp over warmup
    for e in range(5):
        assert lr_at_epoch(cfg, e, total) == pytest.approx(3e-4 * (e + 1) / 5)
    # exactly the configured rate at warmup end
    assert abs(lr_at_epoch(cfg, 5, total) - 3e-4) < 1e-9
    # cosine decay to ~0 at the final epoch
    values = [lr_at_epoch(cfg, e, total) for e in range(5, total)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert values[-1] < 3e-4 * 0.05
    assert lr_at_epoch(OptimizerConfig(lr=1e-3, warmup_epochs=0), 0, 10) == pytest.approx(1e-3)


def test_pretrain_mse_runs_without_discriminator(dataset24, tmp_path):
    cfg = tiny_run_config(variant="mse", epochs=2)
    ckpt, log = pretrain(cfg, dataset=dataset24, out_dir=tmp_path / "run")
    trainer = Trainer.load(ckpt, dataset24)
    assert trainer.discriminator is None and trainer.opt_d is None
    records = [json.loads(line) for line in open(log)]
    assert len(records) == 2 * (len(dataset24) // cfg.optimizer.batch_size)
    assert all("mse" in r and "adv_d" not in r for r in records)
    assert (tmp_path / "run" / "resolved_config.cfg").exists()


def test_even_epoch_schedule_in_logs(dataset24, tmp_path):
    cfg = tiny_run_config(variant="gan_perceptual", epochs=2)
    _, log = pretrain(cfg, dataset=dataset24, out_dir=tmp_path / "run")
    records = [json.loads(line) for line in open(log)]
    for r in records:
        assert r["feat_skipped"] == (r["epoch"] % 2 == 1)
        if r["feat_skipped"]:
            assert r["feat"] == 0.0
        else:
            assert r["feat"] != 0.0


def test_schedule_disabled_flag(dataset24, tmp_path):
    cfg = tiny_run_config(variant="gan_perceptual", epochs=2)
    cfg.loss.perceptual_even_epochs_only = False
    _, log = pretrain(cfg, dataset=dataset24, out_dir=tmp_path / "run")
    records = [json.loads(line) for line in open(log)]
    assert all(not r["feat_skipped"] for r in records)


def test_identical_seeds_identical_logs(dataset24, tmp_path):
    cfg = tiny_run_config(variant="gan_perceptual", epochs=2, seed=11)
    cfg.ada.enabled = True
    cfg.path_length.enabled = True
    _, log_a = pretrain(cfg, dataset=dataset24, out_dir=tmp_path / "a")
    _, log_b = pretrain(cfg, dataset=dataset24, out_dir=tmp_path / "b")
    assert open(log_a, "rb").read() == open(log_b, "rb").read()


def test_step_isolation_between_players(dataset24):
    cfg = tiny_run_config(variant="gan_perceptual", epochs=2)
    trainer = Trainer(cfg, dataset24)
    d_before = param_checksum(trainer.discriminator)
    g_before = param_checksum(trainer.model)
    trainer.step()
    # both changed over a full step
    assert param_checksum(trainer.discriminator) != d_before
    assert param_checksum(trainer.model) != g_before
    # generator pass alone must not touch the discriminator
    d_mid = param_checksum(trainer.discriminator)
    images, _ = dataset24.get_batch(range(8))
    from percmae.data import apply_augment
    from percmae.patches import sample_mask

    x = apply_augment(images, trainer.policy, trainer.gen)
    plan = sample_mask(trainer.model.num_patches, cfg.mask_ratio, trainer.gen, batch_size=8)
    bundle = trainer.model(x, plan)
    total, _ = trainer._generator_pass(x, bundle, plan)
    trainer.opt_g.zero_grad()
    total.backward()
    trainer.opt_g.step()
    assert param_checksum(trainer.discriminator) == d_mid


def test_resume_is_bit_exact(dataset24, tmp_path):
    cfg = tiny_run_config(variant="gan_perceptual", epochs=3, seed=5)
    cfg.ada.enabled = True
    cfg.path_length.enabled = True
    cfg.optimizer.batch_size = 8  # 24 samples -> 3 steps per epoch

    t1 = Trainer(cfg, dataset24)
    t1.step()
    t1.step()
    path = t1.save(tmp_path / "mid.ckpt")
    t2 = Trainer.load(path, dataset24)
    assert param_checksum(t1.model) == param_checksum(t2.model)
    assert param_checksum(t1.discriminator) == param_checksum(t2.discriminator)

    r1 = t1.step()
    r2 = t2.step()
    assert r1 == r2
    assert param_checksum(t1.model) == param_checksum(t2.model)
    assert param_checksum(t1.discriminator) == param_checksum(t2.discriminator)


def test_resume_across_epoch_boundary(dataset24, tmp_path):
    cfg = tiny_run_config(variant="mse", epochs=2, seed=9)
    t1 = Trainer(cfg, dataset24)
    t1.train_epoch()
    path = t1.save(tmp_path / "epoch1.ckpt")
    records_direct = t1.train_epoch()
    t2 = Trainer.load(path, dataset24)
    records_resumed = t2.train_epoch()
    assert records_direct == records_resumed
    assert param_checksum(t1.model) == param_checksum(t2.model)


def test_load_mismatched_architecture_names_array(dataset24, tmp_path):
    cfg = tiny_run_config(variant="mse", epochs=1)
    trainer = Trainer(cfg, dataset24)
    path = trainer.save(tmp_path / "t.ckpt")

    from percmae.checkpoint import load_arrays, load_module_arrays
    from percmae.training import build_models

    other_cfg = tiny_run_config(variant="mse", epochs=1)
    other_cfg.model.encoder_width = 128
    other_cfg.model.encoder_heads = 4
    other, _ = build_models(other_cfg)
    arrays, _ = load_arrays(path)
    with pytest.raises(Exception, match="model\\."):
        load_module_arrays(other, arrays, "model.")


def test_non_finite_loss_aborts_with_term_and_checkpoint(dataset24, tmp_path):
    cfg = tiny_run_config(variant="mse", epochs=1)
    trainer = Trainer(cfg, dataset24, checkpoint_dir=tmp_path / "ckpts")
    with torch.no_grad():
        trainer.model.pred_head.weight.fill_(float("nan"))
    with pytest.raises(NonFiniteLossError) as err:
        trainer.step()
    assert err.value.term == "mse"
    assert err.value.checkpoint_path is not None
    assert err.value.checkpoint_path.exists()


def test_dataset_smaller_than_batch_rejected():
    cfg = tiny_run_config(variant="mse")
    cfg.optimizer.batch_size = 64
    with pytest.raises(ConfigurationError):
        Trainer(cfg, synthetic_color_dataset(2, 4))


def test_config_cross_validation():
    with pytest.raises(ConfigurationError):
        tiny_run_config(variant="mse", epochs=2, **{"ada.enabled": True}).validate()
    with pytest.raises(ConfigurationError):
        tiny_run_config(variant="mse", **{"disc.multi_scale": True}).validate()
    with pytest.raises(ConfigurationError):
        tiny_run_config(variant="mse", **{"optimizer.warmup_epochs": 50}).validate()
    cfg = tiny_run_config(variant="gan_perceptual", msg_enabled=True)
    cfg.disc.multi_scale = True
    cfg.validate()


def test_msg_multiscale_training_smoke(dataset24, tmp_path):
    cfg = tiny_run_config(variant="gan_perceptual", epochs=2, msg_enabled=True)
    cfg.model.decoder_depth = 3
    cfg.disc.multi_scale = True
    cfg.ada.enabled = True
    _, log = pretrain(cfg, dataset=dataset24, out_dir=tmp_path / "msg")
    records = [json.loads(line) for line in open(log)]
    assert all(math.isfinite(r["total_g"]) for r in records)


def test_pixel_target_flags_training_smoke(dataset24, tmp_path):
    cfg = tiny_run_config(variant="mse", epochs=1)
    cfg.loss.l1_masked_only = True
    cfg.loss.norm_pix_targets = True
    _, log = pretrain(cfg, dataset=dataset24, out_dir=tmp_path / "flags")
    records = [json.loads(line) for line in open(log)]
    assert all(math.isfinite(r["mse"]) for r in records)
    cfg2 = tiny_run_config(variant="mse", epochs=1)
    _, log2 = pretrain(cfg2, dataset=dataset24, out_dir=tmp_path / "plain")
    plain = [json.loads(line) for line in open(log2)]
    assert records[0]["mse"] != plain[0]["mse"]


def test_loss_network_variant_training(dataset24, tmp_path):
    from percmae.loss_network import save_feature_net, seeded_feature_net

    net_path = tmp_path / "lossnet.ckpt"
    save_feature_net(seeded_feature_net(3), net_path)
    cfg = tiny_run_config(variant="loss_network_perceptual", epochs=2)
    cfg.loss_network.kind = "external"
    cfg.loss_network.weights_path = str(net_path)
    _, log = pretrain(cfg, dataset=dataset24, out_dir=tmp_path / "ln")
    records = [json.loads(line) for line in open(log)]
    assert all("adv_g" not in r for r in records)
    assert any(r["feat"] > 0 for r in records if r["epoch"] == 0)


def test_linear_probe_separable_classes(tmp_path):
    ds = synthetic_color_dataset(2, 24, image_size=32, seed=1, noise=0.05)
    cfg = tiny_run_config(variant="mse", epochs=1)
    ckpt, _ = pretrain(cfg, dataset=ds, out_dir=tmp_path / "run")
    acc = linear_probe(ckpt, ds, epochs=10, seed=0)
    assert acc >= 0.95


def test_linear_probe_requires_labels(tmp_path, dataset24):
    from percmae.data import ArrayDataset

    cfg = tiny_run_config(variant="mse", epochs=1)
    ckpt, _ = pretrain(cfg, dataset=dataset24, out_dir=tmp_path / "run")
    unlabeled = ArrayDataset(torch.rand(16, 3, 32, 32))
    with pytest.raises(ConfigurationError, match="label"):
        linear_probe(ckpt, unlabeled, epochs=1)


def test_finetune_memorizes_and_beats_probe(tmp_path):
    ds = synthetic_color_dataset(2, 16, image_size=32, seed=2, noise=0.05)
    cfg = tiny_run_config(variant="mse", epochs=1, seed=3)
    ckpt, _ = pretrain(cfg, dataset=ds, out_dir=tmp_path / "run")
    probe_acc = linear_probe(ckpt, ds, epochs=8, seed=0)
    tune_acc = finetune_classifier(ckpt, ds, epochs=8, seed=0)
    assert tune_acc >= 0.9
    assert tune_acc >= probe_acc


def test_checkpoint_cadence_final_fallback(dataset24, tmp_path):
    cfg = tiny_run_config(variant="mse", epochs=2)
    cfg.checkpoint_every = 5  # longer than the run: a final checkpoint still lands
    ckpt, _ = pretrain(cfg, dataset=dataset24, out_dir=tmp_path / "run")
    assert ckpt.exists()
    assert len(list((tmp_path / "run" / "checkpoints").glob("*.ckpt"))) == 1


def test_load_pretrained_roundtrip(tmp_path, dataset24):
    cfg = tiny_run_config(variant="mse", epochs=1, seed=4)
    ckpt, _ = pretrain(cfg, dataset=dataset24, out_dir=tmp_path / "run")
    model, loaded_cfg = load_pretrained(ckpt)
    assert loaded_cfg.seed == 4
    trainer = Trainer.load(ckpt, dataset24)
    assert param_checksum(model) == param_checksum(trainer.model)
