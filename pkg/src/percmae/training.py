"""Pretraining loop (generator/discriminator alternation with the even-epoch
perceptual schedule), checkpointing, and the downstream probe/fine-tune heads.

All randomness inside a run flows through a single serialized generator, so a
saved state resumes bit-exactly: the next step after a save/load roundtrip is
identical to the uninterrupted run.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint
from .config import RunConfig, config_from_flat, flatten_config, save_config
from .data import AugmentPolicy, Normalization, apply_augment, load_dataset, normalize
from .exceptions import CheckpointError, ConfigurationError, NonFiniteLossError
from .loss_network import LossNetworkSpec, extract_features, load_feature_net
from .losses.adversarial import (
    AdaState,
    PathLengthState,
    ada_update,
    apply_augment_params,
    lsgan_d_loss,
    path_length_penalty,
    sample_augment_params,
)
from .losses.reconstruction import LossWeights, generator_objective
from .models.discriminator import Discriminator, DiscriminatorConfig, image_pyramid
from .models.mae import DecoderConfig, EncoderConfig, MaskedAutoencoder, default_skip_pairs
from .patches import full_visibility_plan, sample_mask

# Translation is excluded when augmenting pyramids: integer shifts at the
# finest scale are not integer at coarser ones.
_PYRAMID_SAFE_OPS = ("hflip", "rot90", "jitter")
_ALL_OPS = ("hflip", "rot90", "translate", "jitter")


def lr_at_epoch(optimizer_cfg, epoch: int, total_epochs: int) -> float:
    """Linear warmup from 0 to the configured rate, then cosine decay to ~0."""
    lr = optimizer_cfg.lr
    warmup = optimizer_cfg.warmup_epochs
    if warmup > 0 and epoch < warmup:
        return lr * (epoch + 1) / warmup
    span = max(1, total_epochs - warmup)
    t = (epoch - warmup) / span
    return lr * 0.5 * (1.0 + math.cos(math.pi * t))


def param_checksum(module: torch.nn.Module) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def resolve_scale_heads(cfg: RunConfig) -> tuple[int, ...]:
    if not cfg.msg_enabled:
        return ()
    if cfg.model.scale_heads:
        return tuple(cfg.model.scale_heads)
    size = cfg.data.image_size
    grid = size // cfg.model.patch_size
    heads = []
    res = size
    while len(heads) < 3 and res >= grid:
        heads.append(res)
        res //= 2
    return tuple(heads)


def build_models(cfg: RunConfig) -> tuple[MaskedAutoencoder, Discriminator | None]:
    m = cfg.model
    if m.encoder_depth > 0:
        enc = EncoderConfig(
            depth=m.encoder_depth,
            width=m.encoder_width,
            heads=m.encoder_heads,
            patch_size=m.patch_size,
            image_size=cfg.data.image_size,
        )
    else:
        enc = EncoderConfig.preset(m.preset, patch_size=m.patch_size, image_size=cfg.data.image_size)
    scale_heads = resolve_scale_heads(cfg)
    skip_pairs = tuple(m.skip_pairs) or (
        default_skip_pairs(enc.depth, m.decoder_depth) if cfg.msg_enabled else ()
    )
    dec = DecoderConfig(
        depth=m.decoder_depth,
        width=m.decoder_width,
        heads=m.decoder_heads,
        msg_enabled=cfg.msg_enabled,
        skip_pairs=skip_pairs if cfg.msg_enabled else (),
        scale_heads=scale_heads,
    )
    model = MaskedAutoencoder(enc, dec)

    needs_disc = cfg.variant == "gan_perceptual" or (
        cfg.variant == "loss_network_perceptual" and cfg.loss_network.kind == "discriminator"
    )
    disc = None
    if needs_disc:
        resolutions = scale_heads if cfg.disc.multi_scale else (cfg.data.image_size,)
        disc = Discriminator(
            DiscriminatorConfig(
                base_channels=cfg.disc.base_channels,
                num_blocks=cfg.disc.num_blocks,
                multi_scale=cfg.disc.multi_scale,
                input_resolutions=resolutions,
            )
        )
    return model, disc


class Trainer:
    """Owns the models, optimizers, controller states, and the rng stream."""

    def __init__(self, cfg: RunConfig, dataset, checkpoint_dir=None):
        cfg.validate()
        self.cfg = cfg
        self.dataset = dataset
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.batch_size = cfg.optimizer.batch_size
        if len(dataset) < self.batch_size:
            raise ConfigurationError(
                f"dataset of {len(dataset)} samples is smaller than batch size {self.batch_size}"
            )

        torch.manual_seed(cfg.seed)
        self.model, self.discriminator = build_models(cfg)
        opt = cfg.optimizer
        self._g_params = [p for _, p in self.model.named_parameters()]
        self.opt_g = torch.optim.AdamW(
            self._g_params, lr=opt.lr, betas=(opt.beta1, opt.beta2), weight_decay=opt.weight_decay
        )
        self.opt_d = None
        if self.discriminator is not None and cfg.variant == "gan_perceptual":
            self._d_params = [p for _, p in self.discriminator.named_parameters()]
            self.opt_d = torch.optim.AdamW(
                self._d_params, lr=opt.lr, betas=(opt.beta1, opt.beta2), weight_decay=opt.weight_decay
            )

        self.external_net = None
        if cfg.variant == "loss_network_perceptual" and cfg.loss_network.kind == "external":
            self.external_net = load_feature_net(cfg.loss_network.weights_path)
        self.loss_spec = LossNetworkSpec(
            kind=cfg.loss_network.kind,
            layer_taps=tuple(cfg.loss_network.layer_taps),
            weights_path=cfg.loss_network.weights_path or None,
        )

        self.weights = LossWeights(
            alpha=cfg.loss.alpha,
            delta_f=cfg.loss.delta_f,
            delta_s=cfg.loss.delta_s,
            perceptual_even_epochs_only=cfg.loss.perceptual_even_epochs_only,
        )
        self.normalization = Normalization(tuple(cfg.data.mean), tuple(cfg.data.std))
        self.policy = AugmentPolicy(
            crop_enabled=cfg.data.crop_enabled,
            crop_scale=tuple(cfg.data.crop_scale),
            hflip_prob=cfg.data.hflip_prob,
            normalization=self.normalization,
        )

        self.ada = (
            AdaState(p=cfg.ada.initial_p, target=cfg.ada.target, step=cfg.ada.step, window=cfg.ada.window)
            if cfg.ada.enabled
            else None
        )
        self.pl = (
            PathLengthState(decay=cfg.path_length.decay, weight=cfg.path_length.weight)
            if cfg.path_length.enabled
            else None
        )

        self.gen = torch.Generator()
        self.gen.manual_seed(cfg.seed)
        self.epoch = 0
        self.global_step = 0
        self._perm: torch.Tensor | None = None
        self._cursor = 0

    # ------------------------------------------------------------------ steps

    def steps_per_epoch(self) -> int:
        return len(self.dataset) // self.batch_size

    def _set_lr(self, lr: float):
        for group in self.opt_g.param_groups:
            group["lr"] = lr
        if self.opt_d is not None:
            for group in self.opt_d.param_groups:
                group["lr"] = lr

    def _ensure_perm(self):
        if self._perm is None:
            self._perm = torch.randperm(len(self.dataset), generator=self.gen)
            self._cursor = 0

    def _check_finite(self, terms: dict):
        for name, value in terms.items():
            if isinstance(value, bool):
                continue
            if not math.isfinite(float(value)):
                path = None
                if self.checkpoint_dir is not None:
                    path = self.save(self.checkpoint_dir / "last_good.ckpt")
                raise NonFiniteLossError(name, path)

    def _ada_p(self) -> float:
        return self.ada.p if self.ada is not None else 0.0

    def _augment_for_disc(self, images_or_pyramid, ops):
        """Independent per-image ADA realization, shared across pyramid levels."""
        if self.ada is None:
            return images_or_pyramid
        levels = (
            images_or_pyramid if isinstance(images_or_pyramid, list) else [images_or_pyramid]
        )
        params = sample_augment_params(
            levels[0].shape[0], self.ada.p, levels[0].shape[-1], self.gen, ops
        )
        out = [apply_augment_params(level, params) for level in levels]
        return out if isinstance(images_or_pyramid, list) else out[0]

    def _disc_step(self, real: torch.Tensor, bundle) -> tuple[float, torch.Tensor]:
        multi = self.cfg.disc.multi_scale
        ops = _PYRAMID_SAFE_OPS if multi else _ALL_OPS
        if multi:
            fake_in = [level.detach() for level in bundle.pyramid]
            real_in = image_pyramid(real, self.discriminator.cfg.input_resolutions)
        else:
            fake_in = bundle.full.detach()
            real_in = real
        real_in = self._augment_for_disc(real_in, ops)
        fake_in = self._augment_for_disc(fake_in, ops)
        self.discriminator.requires_grad_(True)
        out_real = self.discriminator(real_in)
        out_fake = self.discriminator(fake_in)
        d_loss = lsgan_d_loss(out_real.score, out_fake.score)
        self._check_finite({"adv_d": float(d_loss.detach())})
        self.opt_d.zero_grad()
        d_loss.backward()
        self.opt_d.step()
        return float(d_loss.detach()), out_real.score.detach()

    def _generator_pass(self, real: torch.Tensor, bundle, plan):
        """Generator objective with D frozen; shares one ADA realization
        between the fake and real batches so feature targets stay aligned."""
        cfg = self.cfg
        terms: dict = {}
        variant = cfg.variant
        kwargs = dict(
            plan=plan,
            l1_masked_only=cfg.loss.l1_masked_only,
            norm_pix_targets=cfg.loss.norm_pix_targets,
            patch_size=cfg.model.patch_size,
        )
        total = None
        if variant == "gan_perceptual":
            multi = cfg.disc.multi_scale
            ops = _PYRAMID_SAFE_OPS if multi else _ALL_OPS
            fake_in = bundle.pyramid if multi else bundle.full
            real_in = image_pyramid(real, self.discriminator.cfg.input_resolutions) if multi else real
            if self.ada is not None:
                levels = fake_in if multi else [fake_in]
                params = sample_augment_params(
                    real.shape[0], self.ada.p, levels[0].shape[-1], self.gen, ops
                )
                fake_in = [apply_augment_params(level, params) for level in levels]
                real_in = [
                    apply_augment_params(level, params)
                    for level in (real_in if multi else [real_in])
                ]
                if not multi:
                    fake_in, real_in = fake_in[0], real_in[0]
            self.discriminator.requires_grad_(False)
            out_fake = self.discriminator(fake_in)
            with torch.no_grad():
                out_real = self.discriminator(real_in)
            result = generator_objective(
                variant,
                bundle.full,
                real,
                self.weights,
                epoch=self.epoch,
                pred_features=out_fake.features,
                real_features=out_real.features,
                fake_scores=out_fake.score,
                **kwargs,
            )
            total, terms = result.total, dict(result.terms)
            terms["feat_skipped"] = "feat" in result.skipped
            if self.pl is not None and self.global_step % self.cfg.path_length.interval == 0:
                penalty, self.pl = path_length_penalty(
                    bundle.decoder_input_tokens, out_fake.features, self.pl, self.gen
                )
                total = total + penalty
                terms["path_length"] = float(penalty.detach())
            self.discriminator.requires_grad_(True)
        elif variant == "loss_network_perceptual":
            pred_feats = extract_features(
                bundle.full, self.loss_spec, discriminator=self.discriminator, network=self.external_net
            )
            with torch.no_grad():
                real_feats = extract_features(
                    real, self.loss_spec, discriminator=self.discriminator, network=self.external_net
                )
            result = generator_objective(
                variant,
                bundle.full,
                real,
                self.weights,
                epoch=self.epoch,
                pred_features=pred_feats,
                real_features=real_feats,
                **kwargs,
            )
            total, terms = result.total, dict(result.terms)
            terms["feat_skipped"] = "feat" in result.skipped
        else:
            result = generator_objective(
                variant, bundle.full, real, self.weights, epoch=self.epoch, **kwargs
            )
            total, terms = result.total, dict(result.terms)
        return total, terms

    def step(self) -> dict:
        """One training step: D update (adversarial variants) then G update."""
        cfg = self.cfg
        self._ensure_perm()
        if self._cursor + self.batch_size > len(self.dataset):
            raise RuntimeError("epoch exhausted; call train_epoch or reset the permutation")
        idx = self._perm[self._cursor : self._cursor + self.batch_size]
        self._cursor += self.batch_size

        images, _ = self.dataset.get_batch(idx)
        x = apply_augment(images, self.policy, self.gen)
        plan = sample_mask(self.model.num_patches, cfg.mask_ratio, self.gen, batch_size=x.shape[0])
        lr = lr_at_epoch(cfg.optimizer, self.epoch, cfg.epochs)
        self._set_lr(lr)

        bundle = self.model(x, plan)
        record = {"epoch": self.epoch, "step": self.global_step, "lr": lr}

        if cfg.variant == "gan_perceptual":
            d_loss, d_real_scores = self._disc_step(x, bundle)
            record["adv_d"] = d_loss
            if self.ada is not None:
                self.ada = ada_update(self.ada, d_real_scores)

        total, terms = self._generator_pass(x, bundle, plan)
        record.update(terms)
        record["total_g"] = float(total.detach())
        record["ada_p"] = self._ada_p()
        self._check_finite(
            {k: v for k, v in record.items() if isinstance(v, float)}
        )
        self.opt_g.zero_grad()
        total.backward()
        self.opt_g.step()

        self.global_step += 1
        return record

    def train_epoch(self, log_fh=None) -> list[dict]:
        records = []
        self._ensure_perm()
        for _ in range(self.steps_per_epoch() - self._cursor // self.batch_size):
            record = self.step()
            records.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._perm = None
        self._cursor = 0
        self.epoch += 1
        return records

    # ----------------------------------------------------------- persistence

    def _optimizer_arrays(self, opt, params, module, prefix: str) -> dict:
        arrays = {}
        names = [n for n, _ in module.named_parameters()]
        for name, param in zip(names, params):
            state = opt.state.get(param)
            if not state:
                continue
            arrays[f"{prefix}.{name}.exp_avg"] = state["exp_avg"]
            arrays[f"{prefix}.{name}.exp_avg_sq"] = state["exp_avg_sq"]
            arrays[f"{prefix}.{name}.step"] = np.asarray(float(state["step"]), dtype=np.float64)
        return arrays

    def _load_optimizer_arrays(self, opt, params, module, prefix: str, arrays: dict):
        names = [n for n, _ in module.named_parameters()]
        for name, param in zip(names, params):
            key = f"{prefix}.{name}.exp_avg"
            if key not in arrays:
                continue
            opt.state[param] = {
                "step": torch.tensor(float(arrays[f"{prefix}.{name}.step"])),
                "exp_avg": torch.from_numpy(np.ascontiguousarray(arrays[key])),
                "exp_avg_sq": torch.from_numpy(
                    np.ascontiguousarray(arrays[f"{prefix}.{name}.exp_avg_sq"])
                ),
            }

    def save(self, path) -> Path:
        arrays = checkpoint.module_arrays(self.model, "model.")
        if self.discriminator is not None:
            arrays.update(checkpoint.module_arrays(self.discriminator, "disc."))
        arrays.update(self._optimizer_arrays(self.opt_g, self._g_params, self.model, "opt_g"))
        if self.opt_d is not None:
            arrays.update(
                self._optimizer_arrays(self.opt_d, self._d_params, self.discriminator, "opt_d")
            )
        arrays["rng.train"] = self.gen.get_state().numpy()
        arrays["loop.perm"] = (
            self._perm.numpy() if self._perm is not None else np.zeros(0, dtype=np.int64)
        )
        meta = {
            "kind": "train_state",
            "epoch": self.epoch,
            "global_step": self.global_step,
            "cursor": self._cursor,
            "config": flatten_config(self.cfg),
            "ada": None
            if self.ada is None
            else {
                "p": self.ada.p,
                "rt_estimate": self.ada.rt_estimate,
                "acc_sum": self.ada.acc_sum,
                "acc_count": self.ada.acc_count,
            },
            "path_length": None if self.pl is None else {"ema_a": self.pl.ema_a},
        }
        return checkpoint.save_arrays(path, arrays, meta)

    @classmethod
    def load(cls, path, dataset, checkpoint_dir=None) -> "Trainer":
        arrays, meta = checkpoint.load_arrays(path)
        if meta.get("kind") != "train_state":
            raise CheckpointError(f"{path} does not hold a training state")
        cfg = config_from_flat(meta["config"])
        trainer = cls(cfg, dataset, checkpoint_dir=checkpoint_dir)
        checkpoint.load_module_arrays(trainer.model, arrays, "model.")
        if trainer.discriminator is not None:
            checkpoint.load_module_arrays(trainer.discriminator, arrays, "disc.")
        trainer._load_optimizer_arrays(trainer.opt_g, trainer._g_params, trainer.model, "opt_g", arrays)
        if trainer.opt_d is not None:
            trainer._load_optimizer_arrays(
                trainer.opt_d, trainer._d_params, trainer.discriminator, "opt_d", arrays
            )
        trainer.gen.set_state(torch.from_numpy(np.ascontiguousarray(arrays["rng.train"])))
        perm = arrays["loop.perm"]
        trainer._perm = torch.from_numpy(np.ascontiguousarray(perm)) if perm.size else None
        trainer._cursor = int(meta["cursor"])
        trainer.epoch = int(meta["epoch"])
        trainer.global_step = int(meta["global_step"])
        if meta["ada"] is not None and trainer.ada is not None:
            a = meta["ada"]
            trainer.ada = AdaState(
                p=a["p"],
                target=trainer.cfg.ada.target,
                step=trainer.cfg.ada.step,
                window=trainer.cfg.ada.window,
                rt_estimate=a["rt_estimate"],
                acc_sum=a["acc_sum"],
                acc_count=a["acc_count"],
            )
        if meta["path_length"] is not None and trainer.pl is not None:
            trainer.pl = PathLengthState(
                ema_a=meta["path_length"]["ema_a"],
                decay=trainer.cfg.path_length.decay,
                weight=trainer.cfg.path_length.weight,
            )
        return trainer


def save_checkpoint(trainer: Trainer, path) -> Path:
    return trainer.save(path)


def load_checkpoint(path, dataset) -> Trainer:
    return Trainer.load(path, dataset)


def pretrain(cfg: RunConfig, dataset=None, out_dir="runs/pretrain") -> tuple[Path, Path]:
    """Run the full pretraining loop; returns (final checkpoint, metrics log)."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "resolved_config.cfg")
    if dataset is None:
        dataset = load_dataset(cfg.data.root, cfg.data.split, cfg.data.image_size)
    ckpt_dir = out / "checkpoints"
    trainer = Trainer(cfg, dataset, checkpoint_dir=ckpt_dir)
    log_path = out / "metrics.jsonl"
    last = None
    with open(log_path, "w") as fh:
        for _ in range(cfg.epochs):
            trainer.train_epoch(fh)
            if trainer.epoch % cfg.checkpoint_every == 0 or trainer.epoch == cfg.epochs:
                last = trainer.save(ckpt_dir / f"epoch_{trainer.epoch:04d}.ckpt")
    if last is None:
        last = trainer.save(ckpt_dir / f"epoch_{trainer.epoch:04d}.ckpt")
    return last, log_path


# -------------------------------------------------------------- downstream


def load_pretrained(path) -> tuple[MaskedAutoencoder, RunConfig]:
    """Rebuild the autoencoder held in a training-state or model checkpoint."""
    arrays, meta = checkpoint.load_arrays(path)
    if "config" not in meta:
        raise CheckpointError(f"{path} has no config in its manifest meta")
    cfg = config_from_flat(meta["config"])
    torch.manual_seed(cfg.seed)
    model, _ = build_models(cfg)
    checkpoint.load_module_arrays(model, arrays, "model.")
    return model, cfg


def pooled_features(model: MaskedAutoencoder, images: torch.Tensor, pooling: str = "mean") -> torch.Tensor:
    tokens, _ = model.encode(images, full_visibility_plan(model.num_patches, images.shape[0]))
    if pooling == "cls":
        return tokens[:, 0]
    if pooling == "mean":
        return tokens[:, 1:].mean(dim=1)
    raise ConfigurationError(f"unknown pooling {pooling!r}; use 'mean' or 'cls'")


def _require_labels(dataset):
    if getattr(dataset, "labels", None) is None:
        raise ConfigurationError("this operation needs a labeled dataset")


def _extract_all_features(model, dataset, normalization, pooling, batch_size=64):
    feats, labels = [], []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            idx = range(start, min(start + batch_size, len(dataset)))
            images, batch_labels = dataset.get_batch(idx)
            x = normalize(images, normalization)
            feats.append(pooled_features(model, x, pooling))
            labels.append(batch_labels)
    return torch.cat(feats), torch.cat(labels)


def linear_probe(
    checkpoint_path,
    dataset,
    epochs: int = 20,
    eval_dataset=None,
    lr: float = 0.01,
    pooling: str = "mean",
    batch_size: int = 64,
    seed: int = 0,
) -> float:
    """Freeze the pretrained encoder and train a linear classifier on top.

    Returns top-1 accuracy on ``eval_dataset`` (or the training set when no
    held-out set is given). The encoder is verified untouched by checksum.
    """
    _require_labels(dataset)
    model, cfg = load_pretrained(checkpoint_path)
    model.requires_grad_(False)
    model.eval()
    before = param_checksum(model)
    norm = Normalization(tuple(cfg.data.mean), tuple(cfg.data.std))

    feats, labels = _extract_all_features(model, dataset, norm, pooling, batch_size)
    num_classes = int(labels.max()) + 1
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    head = torch.nn.Linear(feats.shape[1], num_classes)
    opt = torch.optim.Adam(head.parameters(), lr=lr)
    n = feats.shape[0]
    for _ in range(epochs):
        perm = torch.randperm(n, generator=gen)
        for start in range(0, n - batch_size + 1, batch_size):
            idx = perm[start : start + batch_size]
            loss = F.cross_entropy(head(feats[idx]), labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        if n < batch_size:
            loss = F.cross_entropy(head(feats), labels)
            opt.zero_grad()
            loss.backward()
            opt.step()

    if eval_dataset is not None:
        _require_labels(eval_dataset)
        feats, labels = _extract_all_features(model, eval_dataset, norm, pooling, batch_size)
    with torch.no_grad():
        accuracy = float((head(feats).argmax(dim=1) == labels).float().mean())
    after = param_checksum(model)
    if before != after:
        raise RuntimeError("frozen encoder parameters changed during linear probing")
    return accuracy


def finetune_classifier(
    checkpoint_path,
    dataset,
    epochs: int = 10,
    eval_dataset=None,
    lr: float = 0.001,
    warmup_epochs: int = 5,
    weight_decay: float = 0.05,
    pooling: str = "mean",
    batch_size: int = 64,
    seed: int = 0,
) -> float:
    """Replace the decoder with a classification head and train end to end."""
    _require_labels(dataset)
    model, cfg = load_pretrained(checkpoint_path)
    model.requires_grad_(True)
    norm = Normalization(tuple(cfg.data.mean), tuple(cfg.data.std))
    num_classes = int(max(dataset.labels)) + 1

    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    head = torch.nn.Sequential(
        torch.nn.LayerNorm(model.encoder_cfg.width),
        torch.nn.Linear(model.encoder_cfg.width, num_classes),
    )
    params = list(model.parameters()) + list(head.parameters())
    opt = torch.optim.AdamW(params, lr=lr, betas=(0.9, 0.95), weight_decay=weight_decay)
    warmup = min(warmup_epochs, epochs)
    n = len(dataset)
    steps = max(1, n // batch_size)
    for epoch in range(epochs):
        if warmup > 0 and epoch < warmup:
            epoch_lr = lr * (epoch + 1) / warmup
        else:
            span = max(1, epochs - warmup)
            epoch_lr = lr * 0.5 * (1 + math.cos(math.pi * (epoch - warmup) / span))
        for group in opt.param_groups:
            group["lr"] = epoch_lr
        perm = torch.randperm(n, generator=gen)
        for start in range(steps):
            idx = perm[start * batch_size : (start + 1) * batch_size]
            if idx.numel() == 0:
                idx = perm
            images, labels = dataset.get_batch(idx)
            x = normalize(images, norm)
            logits = head(pooled_features(model, x, pooling))
            loss = F.cross_entropy(logits, labels)
            opt.zero_grad()
            loss.backward()
            opt.step()

    target = eval_dataset if eval_dataset is not None else dataset
    _require_labels(target)
    correct = 0
    total = 0
    model.eval()
    with torch.no_grad():
        for start in range(0, len(target), batch_size):
            idx = range(start, min(start + batch_size, len(target)))
            images, labels = target.get_batch(idx)
            logits = head(pooled_features(model, normalize(images, norm), pooling))
            correct += int((logits.argmax(dim=1) == labels).sum())
            total += len(labels)
    return correct / total


