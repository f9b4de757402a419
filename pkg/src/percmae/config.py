"""Run configuration: nested dataclasses plus a dotted key = value text format.

Config files hold one ``dotted.path = json-value`` assignment per line, with
``#`` comments; the same syntax is used for command-line overrides. Every key
is type-checked against the schema derived from the dataclass annotations,
and a fully materialized snapshot can be written back with
:func:`format_config_text`.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .exceptions import ConfigurationError

VARIANTS = ("mse", "ms_ssim_l1", "gan_perceptual", "loss_network_perceptual")


@dataclass
class DataConfig:
    root: str = ""
    split: str = "train"
    val_split: str = ""
    image_size: int = 32
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.5, 0.5, 0.5)
    crop_enabled: bool = True
    crop_scale: tuple[float, float] = (0.2, 1.0)
    hflip_prob: float = 0.5


@dataclass
class ModelConfig:
    preset: str = "vit-tiny"
    patch_size: int = 4
    encoder_depth: int = 0  # 0 = take from preset
    encoder_width: int = 0
    encoder_heads: int = 0
    decoder_depth: int = 4
    decoder_width: int = 128
    decoder_heads: int = 4
    scale_heads: tuple[int, ...] = ()
    skip_pairs: tuple[tuple[int, int], ...] = ()


@dataclass
class LossConfig:
    alpha: float = 0.85
    delta_f: float = 0.05
    delta_s: float = 40.0
    perceptual_even_epochs_only: bool = True
    # pixel-term target options: restrict to masked patches, and/or compare
    # against per-patch mean/std-normalized targets instead of raw pixels
    l1_masked_only: bool = False
    norm_pix_targets: bool = False


@dataclass
class OptimizerConfig:
    lr: float = 0.00015
    weight_decay: float = 0.05
    warmup_epochs: int = 40
    beta1: float = 0.9
    beta2: float = 0.95
    batch_size: int = 16

    def validate(self):
        if self.lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.lr}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigurationError("momentum betas must sit in (0, 1)")
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be at least 1")
        if self.warmup_epochs < 0:
            raise ConfigurationError("warmup epochs cannot be negative")


@dataclass
class DiscConfig:
    base_channels: int = 32
    num_blocks: int = 3
    multi_scale: bool = False


@dataclass
class AdaConfig:
    enabled: bool = False
    target: float = 0.6
    step: float = 0.005
    window: int = 4
    initial_p: float = 0.0


@dataclass
class PathLengthConfig:
    enabled: bool = False
    weight: float = 2.0
    decay: float = 0.99
    interval: int = 4


@dataclass
class LossNetworkConfig:
    kind: str = "discriminator"
    layer_taps: tuple[str, ...] = ()
    weights_path: str = ""


@dataclass
class ProbeConfig:
    epochs: int = 20
    lr: float = 0.01
    pooling: str = "mean"  # "mean" | "cls"
    batch_size: int = 64


@dataclass
class FinetuneConfig:
    epochs: int = 10
    lr: float = 0.001
    warmup_epochs: int = 5
    weight_decay: float = 0.05
    batch_size: int = 64


@dataclass
class RunConfig:
    seed: int = 0
    variant: str = "mse"
    msg_enabled: bool = False
    epochs: int = 300  # full-scale protocol default; desk runs override
    mask_ratio: float = 0.75
    checkpoint_every: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    disc: DiscConfig = field(default_factory=DiscConfig)
    ada: AdaConfig = field(default_factory=AdaConfig)
    path_length: PathLengthConfig = field(default_factory=PathLengthConfig)
    loss_network: LossNetworkConfig = field(default_factory=LossNetworkConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)

    def validate(self) -> "RunConfig":
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigurationError(f"mask ratio must be in (0, 1), got {self.mask_ratio}")
        if self.checkpoint_every < 1:
            raise ConfigurationError("checkpoint cadence must be at least 1 epoch")
        self.optimizer.validate()
        if self.optimizer.warmup_epochs > self.epochs:
            raise ConfigurationError(
                f"warmup ({self.optimizer.warmup_epochs}) cannot exceed total epochs ({self.epochs})"
            )
        adversarial = self.variant == "gan_perceptual"
        if adversarial and self.disc.num_blocks < 1:
            raise ConfigurationError("gan variants require a discriminator (disc.num_blocks >= 1)")
        if self.disc.multi_scale and not self.msg_enabled:
            raise ConfigurationError(
                "disc.multi_scale needs msg_enabled=true to produce an output pyramid"
            )
        if self.disc.multi_scale and not adversarial:
            raise ConfigurationError("disc.multi_scale only makes sense for variant gan_perceptual")
        if self.ada.enabled and not adversarial:
            raise ConfigurationError("ada.enabled requires variant gan_perceptual")
        if self.path_length.enabled and not adversarial:
            raise ConfigurationError("path_length.enabled requires variant gan_perceptual")
        if self.variant == "loss_network_perceptual":
            if self.loss_network.kind == "external" and not self.loss_network.weights_path:
                raise ConfigurationError("external loss network requires loss_network.weights_path")
        if self.model.preset and self.model.encoder_depth == 0:
            from .models.mae import ENCODER_PRESETS

            if self.model.preset not in ENCODER_PRESETS:
                raise ConfigurationError(
                    f"unknown model preset {self.model.preset!r}; "
                    f"choose from {sorted(ENCODER_PRESETS)} or set encoder_* fields"
                )
        return self


def _leaf_fields(cls, prefix: str = "") -> dict:
    """Flatten dataclass annotations into dotted-path -> type hints."""
    out = {}
    hints = typing.get_type_hints(cls)
    for f in fields(cls):
        hint = hints[f.name]
        if dataclasses.is_dataclass(hint):
            out.update(_leaf_fields(hint, prefix + f.name + "."))
        else:
            out[prefix + f.name] = hint
    return out


def config_schema() -> dict:
    return _leaf_fields(RunConfig)


def _convert(value, hint, key: str):
    origin = typing.get_origin(hint)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{key}: expected a list, got {value!r}")
        args = typing.get_args(hint)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(v, args[0], key) for v in value)
        if len(args) != len(value):
            raise ConfigurationError(f"{key}: expected {len(args)} entries, got {len(value)}")
        return tuple(_convert(v, a, key) for v, a in zip(value, args))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{key}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{key}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{key}: expected a string, got {value!r}")
        return value
    raise ConfigurationError(f"{key}: unsupported config type {hint!r}")


def flatten_config(cfg: RunConfig) -> dict:
    out = {}

    def walk(obj, prefix=""):
        for f in fields(obj):
            val = getattr(obj, f.name)
            if dataclasses.is_dataclass(val) and not isinstance(val, type):
                walk(val, prefix + f.name + ".")
            else:
                out[prefix + f.name] = val

    walk(cfg)
    return out


def config_from_flat(flat: dict) -> RunConfig:
    schema = config_schema()
    unknown = sorted(set(flat) - set(schema))
    if unknown:
        raise ConfigurationError(f"unknown config key(s): {unknown}")
    cfg = RunConfig()
    for key, value in flat.items():
        value = _convert(value, schema[key], key)
        obj = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            obj = getattr(obj, part)
        setattr(obj, parts[-1], value)
    return cfg


def parse_config_text(text: str) -> dict:
    """Parse ``dotted.key = json-value`` lines into a flat dict."""
    flat = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        try:
            flat[key] = json.loads(value.strip())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"line {lineno}: invalid value for {key!r}: {exc}") from exc
    return flat


def format_config_text(cfg: RunConfig) -> str:
    flat = flatten_config(cfg)
    lines = [f"{key} = {json.dumps(list(v) if isinstance(v, tuple) else v)}" for key, v in sorted(flat.items())]
    return "\n".join(lines) + "\n"


def apply_overrides(flat: dict, overrides) -> dict:
    """Merge repeatable ``key=value`` override strings into a flat dict."""
    merged = dict(flat)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        key = key.strip()
        try:
            merged[key] = json.loads(value.strip())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"override {key!r}: invalid value ({exc})") from exc
    return merged


def load_config(path, overrides=None) -> RunConfig:
    text = Path(path).read_text()
    flat = apply_overrides(parse_config_text(text), overrides)
    return config_from_flat(flat).validate()


def save_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_config_text(cfg))
    return path
