"""Command-line entry point.

Verbs: pretrain, probe, finetune, eval-recon, render, validate-config.
Exit codes: 0 success, 2 configuration error, 1 runtime failure, with a
single-line ``error:<category>: <detail>`` message on stderr. PERCMAE_OUT_ROOT
sets the default output root.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import torch

from .config import RunConfig, load_config, save_config
from .data import Normalization, load_dataset
from .evaluation import ConvEmbedder, evaluate_reconstruction, render_outputs, write_report
from .exceptions import ConfigurationError, PercmaeError
from .training import finetune_classifier, linear_probe, load_pretrained, pretrain

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error:config: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _build_parser() -> _Parser:
    parser = _Parser(prog="percmae", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("pretrain", "probe", "finetune", "eval-recon", "render", "validate-config"):
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True, help="path to a run config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--checkpoint", default=None, help="checkpoint file to load")
        p.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted config override, repeatable (e.g. optimizer.lr=3e-4)",
        )
    return parser


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get("PERCMAE_OUT_ROOT", "runs")
    return Path(root) / args.verb


def _load_cfg(args) -> RunConfig:
    try:
        cfg = load_config(args.config, overrides=args.override)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg.validate()


def _require_checkpoint(args) -> str:
    if not args.checkpoint:
        raise ConfigurationError(f"{args.verb} requires --checkpoint")
    return args.checkpoint


def _eval_dataset(cfg: RunConfig):
    split = cfg.data.val_split or cfg.data.split
    return load_dataset(cfg.data.root, split, cfg.data.image_size)


def _cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    ckpt, log = pretrain(cfg, out_dir=out)
    print(f"checkpoint: {ckpt}")
    print(f"metrics: {log}")
    return EXIT_OK


def _cmd_probe(args) -> int:
    cfg = _load_cfg(args)
    ckpt = _require_checkpoint(args)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "resolved_config.cfg")
    train_ds = load_dataset(cfg.data.root, cfg.data.split, cfg.data.image_size)
    eval_ds = _eval_dataset(cfg) if cfg.data.val_split else None
    acc = linear_probe(
        ckpt,
        train_ds,
        epochs=cfg.probe.epochs,
        eval_dataset=eval_ds,
        lr=cfg.probe.lr,
        pooling=cfg.probe.pooling,
        batch_size=cfg.probe.batch_size,
        seed=cfg.seed,
    )
    (out / "probe_result.json").write_text(json.dumps({"accuracy": acc}, sort_keys=True) + "\n")
    print(f"probe accuracy: {acc:.4f}")
    return EXIT_OK


def _cmd_finetune(args) -> int:
    cfg = _load_cfg(args)
    ckpt = _require_checkpoint(args)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "resolved_config.cfg")
    train_ds = load_dataset(cfg.data.root, cfg.data.split, cfg.data.image_size)
    eval_ds = _eval_dataset(cfg) if cfg.data.val_split else None
    acc = finetune_classifier(
        ckpt,
        train_ds,
        epochs=cfg.finetune.epochs,
        eval_dataset=eval_ds,
        lr=cfg.finetune.lr,
        warmup_epochs=cfg.finetune.warmup_epochs,
        weight_decay=cfg.finetune.weight_decay,
        batch_size=cfg.finetune.batch_size,
        seed=cfg.seed,
    )
    (out / "finetune_result.json").write_text(json.dumps({"accuracy": acc}, sort_keys=True) + "\n")
    print(f"finetune accuracy: {acc:.4f}")
    return EXIT_OK


def _cmd_eval_recon(args) -> int:
    cfg = _load_cfg(args)
    ckpt = _require_checkpoint(args)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "resolved_config.cfg")
    model, model_cfg = load_pretrained(ckpt)
    dataset = _eval_dataset(cfg)
    norm = Normalization(tuple(model_cfg.data.mean), tuple(model_cfg.data.std))
    report = evaluate_reconstruction(
        model,
        dataset,
        embedder=ConvEmbedder(seed=cfg.seed),
        mask_ratio=cfg.mask_ratio,
        seed=cfg.seed,
        normalization=norm,
    )
    write_report(report, out)
    count = min(8, len(dataset))
    images, _ = dataset.get_batch(range(count))
    render_outputs(model, images, out, mask_ratio=cfg.mask_ratio, seed=cfg.seed, normalization=norm)
    print(report.to_table())
    return EXIT_OK


def _cmd_render(args) -> int:
    cfg = _load_cfg(args)
    ckpt = _require_checkpoint(args)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "resolved_config.cfg")
    model, model_cfg = load_pretrained(ckpt)
    dataset = _eval_dataset(cfg)
    norm = Normalization(tuple(model_cfg.data.mean), tuple(model_cfg.data.std))
    count = min(8, len(dataset))
    images, _ = dataset.get_batch(range(count))
    paths = render_outputs(
        model, images, out, mask_ratio=cfg.mask_ratio, seed=cfg.seed, normalization=norm
    )
    print(f"wrote {len(paths)} files to {out}")
    return EXIT_OK


def _cmd_validate_config(args) -> int:
    _load_cfg(args)
    print("config ok")
    return EXIT_OK


_COMMANDS = {
    "pretrain": _cmd_pretrain,
    "probe": _cmd_probe,
    "finetune": _cmd_finetune,
    "eval-recon": _cmd_eval_recon,
    "render": _cmd_render,
    "validate-config": _cmd_validate_config,
}


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    torch.set_num_threads(max(1, torch.get_num_threads()))
    try:
        return _COMMANDS[args.verb](args)
    except ConfigurationError as exc:
        print(f"error:config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PercmaeError as exc:
        print(f"error:runtime: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error:runtime: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def console_entry():
    raise SystemExit(run())


main = run
