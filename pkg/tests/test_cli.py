import json

import pytest

from percmae.cli import run
from percmae.config import (
    RunConfig,
    config_from_flat,
    flatten_config,
    format_config_text,
    load_config,
    parse_config_text,
)
from percmae.exceptions import ConfigurationError

from conftest import write_image_folder


def write_tiny_config(path, root, **extra):
    lines = [
        'variant = "mse"',
        "epochs = 2",
        "seed = 0",
        f'data.root = "{root}"',
        "data.image_size = 32",
        "data.crop_enabled = false",
        "data.hflip_prob = 0.0",
        'model.preset = ""',
        "model.encoder_depth = 2",
        "model.encoder_width = 64",
        "model.encoder_heads = 2",
        "model.decoder_depth = 2",
        "model.decoder_width = 64",
        "model.decoder_heads = 2",
        "optimizer.batch_size = 4",
        "optimizer.warmup_epochs = 1",
    ]
    for key, value in extra.items():
        lines.append(f"{key} = {json.dumps(value)}")
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def cli_env(tmp_path):
    root = write_image_folder(tmp_path / "data", classes=2, per_class=4)
    cfg_path = write_tiny_config(tmp_path / "run.cfg", root)
    return tmp_path, root, cfg_path


def test_config_text_roundtrip():
    cfg = RunConfig()
    cfg.model.skip_pairs = ((0, 1), (2, 3))
    text = format_config_text(cfg)
    back = config_from_flat(parse_config_text(text))
    assert flatten_config(back) == flatten_config(cfg)


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("no.such.key = 1\n")
    with pytest.raises(ConfigurationError, match="no.such.key"):
        load_config(p)


def test_type_mismatch_rejected(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text('epochs = "two"\n')
    with pytest.raises(ConfigurationError, match="epochs"):
        load_config(p)


def test_validate_config_ok(cli_env, capsys):
    _, _, cfg_path = cli_env
    assert run(["validate-config", "--config", str(cfg_path)]) == 0
    assert "config ok" in capsys.readouterr().out


def test_validate_config_incompatibility(cli_env, capsys):
    _, _, cfg_path = cli_env
    code = run(
        ["validate-config", "--config", str(cfg_path), "--override", "ada.enabled=true"]
    )
    assert code == 2
    assert "error:config:" in capsys.readouterr().err


def test_validate_config_msg_mse_allowed(cli_env):
    _, _, cfg_path = cli_env
    assert run(["validate-config", "--config", str(cfg_path), "--override", "msg_enabled=true"]) == 0


def test_unknown_verb_exits_2(capsys):
    assert run(["explode", "--config", "x"]) == 2


def test_missing_config_file(cli_env, capsys):
    tmp_path, _, _ = cli_env
    code = run(["pretrain", "--config", str(tmp_path / "absent.cfg")])
    assert code == 2
    assert "error:config:" in capsys.readouterr().err


def test_pretrain_determinism_byte_identical(cli_env):
    tmp_path, _, cfg_path = cli_env
    assert run(["pretrain", "--config", str(cfg_path), "--seed", "7", "--out", str(tmp_path / "r1")]) == 0
    assert run(["pretrain", "--config", str(cfg_path), "--seed", "7", "--out", str(tmp_path / "r2")]) == 0
    a = (tmp_path / "r1" / "metrics.jsonl").read_bytes()
    b = (tmp_path / "r2" / "metrics.jsonl").read_bytes()
    assert a == b


def test_resolved_snapshot_reproduces_run(cli_env):
    tmp_path, _, cfg_path = cli_env
    assert run(
        [
            "pretrain", "--config", str(cfg_path), "--seed", "3",
            "--out", str(tmp_path / "orig"), "--override", "optimizer.lr=0.001",
        ]
    ) == 0
    snapshot = tmp_path / "orig" / "resolved_config.cfg"
    assert snapshot.exists()
    cfg = load_config(snapshot)
    assert cfg.seed == 3 and cfg.optimizer.lr == 0.001
    assert run(["pretrain", "--config", str(snapshot), "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "orig" / "metrics.jsonl").read_bytes() == (
        tmp_path / "again" / "metrics.jsonl"
    ).read_bytes()


def test_probe_and_finetune_verbs(cli_env, capsys):
    tmp_path, _, cfg_path = cli_env
    run(["pretrain", "--config", str(cfg_path), "--out", str(tmp_path / "run")])
    ckpt = next((tmp_path / "run" / "checkpoints").glob("epoch_*.ckpt"))
    code = run(
        [
            "probe", "--config", str(cfg_path), "--checkpoint", str(ckpt),
            "--out", str(tmp_path / "probe"), "--override", "probe.epochs=2",
        ]
    )
    assert code == 0
    result = json.loads((tmp_path / "probe" / "probe_result.json").read_text())
    assert 0.0 <= result["accuracy"] <= 1.0
    code = run(
        [
            "finetune", "--config", str(cfg_path), "--checkpoint", str(ckpt),
            "--out", str(tmp_path / "ft"), "--override", "finetune.epochs=1",
        ]
    )
    assert code == 0
    assert (tmp_path / "ft" / "finetune_result.json").exists()


def test_probe_requires_checkpoint(cli_env, capsys):
    _, _, cfg_path = cli_env
    assert run(["probe", "--config", str(cfg_path)]) == 2
    assert "checkpoint" in capsys.readouterr().err


def test_eval_recon_outputs(cli_env):
    tmp_path, _, cfg_path = cli_env
    run(["pretrain", "--config", str(cfg_path), "--out", str(tmp_path / "run")])
    ckpt = sorted((tmp_path / "run" / "checkpoints").glob("epoch_*.ckpt"))[-1]
    out = tmp_path / "eval"
    code = run(["eval-recon", "--config", str(cfg_path), "--checkpoint", str(ckpt), "--out", str(out)])
    assert code == 0
    assert (out / "report.json").exists()
    assert (out / "table.txt").exists()
    assert list(out.glob("sample_*_grid.png"))
    assert list(out.glob("sample_*_attn.png"))


def test_render_verb(cli_env):
    tmp_path, _, cfg_path = cli_env
    run(["pretrain", "--config", str(cfg_path), "--out", str(tmp_path / "run")])
    ckpt = sorted((tmp_path / "run" / "checkpoints").glob("epoch_*.ckpt"))[-1]
    out = tmp_path / "render"
    assert run(["render", "--config", str(cfg_path), "--checkpoint", str(ckpt), "--out", str(out)]) == 0
    assert len(list(out.glob("*.png"))) == 16  # 8 grids + 8 attention maps


def test_out_root_env_var(cli_env, monkeypatch):
    tmp_path, _, cfg_path = cli_env
    monkeypatch.setenv("PERCMAE_OUT_ROOT", str(tmp_path / "envroot"))
    assert run(["pretrain", "--config", str(cfg_path)]) == 0
    assert (tmp_path / "envroot" / "pretrain" / "metrics.jsonl").exists()
