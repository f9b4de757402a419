"""Masked autoencoder backbone with optional multi-scale skip architecture.

The encoder sees only visible patch tokens (plus [CLS]); the decoder fills
masked slots with a learned token and reconstructs pixels. When the
multi-scale variant is enabled, intermediate encoder states feed matching
decoder layers through zero-initialized skip projections, and extra pixel
heads emit a descending-resolution pyramid so adversarial gradients can reach
the encoder at every scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from ..exceptions import ConfigurationError
from ..patches import MaskPlan, full_visibility_plan, patchify, tokens_to_images
from .vit import Block, sincos_pos_embed

ENCODER_PRESETS = {
    "vit-tiny": dict(depth=4, width=192, heads=3),
    "vit-b": dict(depth=12, width=768, heads=12),
}


@dataclass(frozen=True)
class EncoderConfig:
    depth: int = 4
    width: int = 192
    heads: int = 3
    patch_size: int = 4
    image_size: int = 32
    channels: int = 3

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ConfigurationError(f"width {self.width} not divisible by heads {self.heads}")
        if self.image_size % self.patch_size != 0:
            raise ConfigurationError(
                f"image size {self.image_size} not divisible by patch size {self.patch_size}"
            )

    @classmethod
    def preset(cls, name: str, patch_size: int = 4, image_size: int = 32, channels: int = 3):
        if name not in ENCODER_PRESETS:
            raise ConfigurationError(
                f"unknown encoder preset {name!r}; choose from {sorted(ENCODER_PRESETS)}"
            )
        return cls(patch_size=patch_size, image_size=image_size, channels=channels, **ENCODER_PRESETS[name])

    @property
    def grid(self) -> tuple[int, int]:
        g = self.image_size // self.patch_size
        return (g, g)

    @property
    def num_patches(self) -> int:
        g = self.image_size // self.patch_size
        return g * g


def default_skip_pairs(encoder_depth: int, decoder_depth: int) -> tuple[tuple[int, int], ...]:
    """Evenly spaced encoder layers mapped in order onto decoder layers."""
    k = min(encoder_depth, decoder_depth)
    if k == 0:
        return ()
    if k == 1:
        return ((encoder_depth - 1, decoder_depth - 1),)
    enc = [round(i * (encoder_depth - 1) / (k - 1)) for i in range(k)]
    dec = [round(i * (decoder_depth - 1) / (k - 1)) for i in range(k)]
    return tuple(zip(enc, dec))


def pyramid_layer_indices(decoder_depth: int, num_scales: int) -> tuple[int, ...]:
    """Decoder layer feeding each scale head, finest scale from the last layer."""
    if num_scales == 1:
        return (decoder_depth - 1,)
    if num_scales > decoder_depth:
        raise ConfigurationError(
            f"decoder depth {decoder_depth} too shallow for {num_scales} scale heads"
        )
    idx = [round((decoder_depth - 1) * (1 - i / (num_scales - 1))) for i in range(num_scales)]
    if len(set(idx)) != num_scales:
        raise ConfigurationError(
            f"decoder depth {decoder_depth} cannot host {num_scales} distinct scale heads"
        )
    return tuple(idx)


@dataclass(frozen=True)
class DecoderConfig:
    depth: int = 4
    width: int = 128
    heads: int = 4
    msg_enabled: bool = False
    skip_pairs: tuple[tuple[int, int], ...] = ()
    scale_heads: tuple[int, ...] = ()

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ConfigurationError(f"decoder width {self.width} not divisible by heads {self.heads}")
        pairs = tuple(tuple(p) for p in self.skip_pairs)
        object.__setattr__(self, "skip_pairs", pairs)
        for (e0, d0), (e1, d1) in zip(pairs, pairs[1:]):
            if not (e0 < e1 and d0 < d1):
                raise ConfigurationError("skip pairs must be strictly increasing on both sides")
        heads = tuple(int(s) for s in self.scale_heads)
        object.__setattr__(self, "scale_heads", heads)
        for a, b in zip(heads, heads[1:]):
            if b * 2 != a:
                raise ConfigurationError(
                    f"scale heads must descend by powers of two, got {heads}"
                )


@dataclass
class ReconstructionBundle:
    """Decoder outputs: full-resolution prediction, optional pyramid, and the
    token sequence fed to the first decoder block (kept for path-length
    regularization)."""

    full: torch.Tensor
    pyramid: list[torch.Tensor]
    decoder_input_tokens: torch.Tensor


@dataclass
class AttentionMaps:
    """Last-layer self-attention; ``cls_row`` is the [CLS] query over patches."""

    weights: torch.Tensor
    cls_row: torch.Tensor


class MaskedAutoencoder(nn.Module):
    def __init__(self, encoder_cfg: EncoderConfig, decoder_cfg: DecoderConfig):
        super().__init__()
        e, d = encoder_cfg, decoder_cfg
        self.encoder_cfg = e
        self.decoder_cfg = d
        self.grid = e.grid
        self.num_patches = e.num_patches
        token_dim = e.patch_size * e.patch_size * e.channels

        for enc_layer, dec_layer in d.skip_pairs:
            if not (0 <= enc_layer < e.depth and 0 <= dec_layer < d.depth):
                raise ConfigurationError(
                    f"skip pair ({enc_layer}, {dec_layer}) out of range for depths "
                    f"{e.depth}/{d.depth}"
                )

        self.patch_embed = nn.Linear(token_dim, e.width)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, e.width))
        self.register_buffer("enc_pos", sincos_pos_embed(e.width, *self.grid), persistent=False)
        self.encoder_blocks = nn.ModuleList(Block(e.width, e.heads) for _ in range(e.depth))
        self.encoder_norm = nn.LayerNorm(e.width)

        self.decoder_embed = nn.Linear(e.width, d.width)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, d.width))
        self.register_buffer("dec_pos", sincos_pos_embed(d.width, *self.grid), persistent=False)
        self.decoder_blocks = nn.ModuleList(Block(d.width, d.heads) for _ in range(d.depth))
        self.decoder_norm = nn.LayerNorm(d.width)
        self.pred_head = nn.Linear(d.width, token_dim)

        self._init_shared_weights()

        # Multi-scale extras are built (and zeroed) after the shared modules so
        # the base and msg models draw identical init streams for shared params.
        self.skip_projections = nn.ModuleDict()
        self.pyramid_heads = nn.ModuleList()
        self._pyramid_patch = []
        self._pyramid_layers: tuple[int, ...] = ()
        if d.msg_enabled:
            for _, dec_layer in d.skip_pairs:
                proj = nn.Linear(d.width + e.width, d.width)
                nn.init.zeros_(proj.weight)
                nn.init.zeros_(proj.bias)
                self.skip_projections[str(dec_layer)] = proj
            scale_heads = d.scale_heads
            if scale_heads:
                if scale_heads[0] != e.image_size:
                    raise ConfigurationError(
                        f"finest scale head {scale_heads[0]} must equal image size {e.image_size}"
                    )
                self._pyramid_layers = pyramid_layer_indices(d.depth, len(scale_heads))
                for res in scale_heads:
                    if res % self.grid[0] != 0 or res < self.grid[0]:
                        raise ConfigurationError(
                            f"scale head {res} not a whole multiple of the {self.grid[0]}-cell grid"
                        )
                    p = res // self.grid[0]
                    head = nn.Linear(d.width, p * p * e.channels)
                    nn.init.zeros_(head.weight)
                    nn.init.zeros_(head.bias)
                    self.pyramid_heads.append(head)
                    self._pyramid_patch.append(p)

    def _init_shared_weights(self):
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.xavier_uniform_(module.weight)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
        nn.init.normal_(self.cls_token, std=0.02)
        nn.init.normal_(self.mask_token, std=0.02)

    def _forward_encoder(self, images: torch.Tensor, plan: MaskPlan | None, return_weights: bool = False):
        e = self.encoder_cfg
        if images.shape[-2:] != (e.image_size, e.image_size) or images.shape[1] != e.channels:
            raise ConfigurationError(
                f"input shape {tuple(images.shape)} does not match encoder config "
                f"({e.channels}x{e.image_size}x{e.image_size})"
            )
        seq = patchify(images, e.patch_size)
        x = self.patch_embed(seq.tokens) + self.enc_pos[:, 1:]
        if plan is not None:
            if plan.num_patches != self.num_patches:
                raise ConfigurationError(
                    f"mask plan covers {plan.num_patches} patches, model has {self.num_patches}"
                )
            idx = plan.visible_indices.unsqueeze(-1).expand(-1, -1, e.width)
            x = torch.gather(x, 1, idx)
        cls = (self.cls_token + self.enc_pos[:, :1]).expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1)
        intermediates = []
        attn = None
        last = len(self.encoder_blocks) - 1
        for i, block in enumerate(self.encoder_blocks):
            if return_weights and i == last:
                x, attn = block(x, return_weights=True)
            else:
                x = block(x)
            intermediates.append(x)
        tokens = self.encoder_norm(x)
        return tokens, intermediates, attn

    def encode(self, images: torch.Tensor, plan: MaskPlan | None = None):
        """Encode visible tokens; returns ([CLS] + visible states, per-layer states)."""
        tokens, intermediates, _ = self._forward_encoder(images, plan)
        return tokens, intermediates

    def decode(
        self,
        tokens: torch.Tensor,
        plan: MaskPlan | None,
        intermediates: list[torch.Tensor] | None = None,
    ) -> ReconstructionBundle:
        d = self.decoder_cfg
        e = self.encoder_cfg
        b = tokens.shape[0]
        n = self.num_patches
        x = self.decoder_embed(tokens)
        cls, visible = x[:, :1], x[:, 1:]
        if plan is None or plan.visible_indices.shape[1] == n:
            grid_tokens = visible
        else:
            idx = plan.visible_indices.unsqueeze(-1).expand(-1, -1, d.width)
            grid_tokens = self.mask_token.expand(b, n, d.width).scatter(1, idx, visible)
        x = torch.cat([cls, grid_tokens], dim=1) + self.dec_pos
        decoder_input = x

        skip_map = {dec: enc for enc, dec in d.skip_pairs} if d.msg_enabled else {}
        if skip_map and intermediates is None:
            raise ConfigurationError("multi-scale decode requires encoder intermediates")
        layer_outputs = []
        for i, block in enumerate(self.decoder_blocks):
            if i in skip_map:
                state = intermediates[skip_map[i]]
                scattered = torch.zeros(b, n, e.width, dtype=state.dtype, device=state.device)
                if plan is None or plan.visible_indices.shape[1] == n:
                    scattered = state[:, 1:]
                else:
                    vidx = plan.visible_indices.unsqueeze(-1).expand(-1, -1, e.width)
                    scattered = scattered.scatter(1, vidx, state[:, 1:])
                skip_full = torch.cat([state[:, :1], scattered], dim=1)
                x = x + self.skip_projections[str(i)](torch.cat([x, skip_full], dim=-1))
            x = block(x)
            layer_outputs.append(x)

        pred_tokens = self.pred_head(self.decoder_norm(x)[:, 1:])
        full = tokens_to_images(pred_tokens, e.patch_size, self.grid, e.channels)
        pyramid = []
        for head, layer_idx, p in zip(self.pyramid_heads, self._pyramid_layers, self._pyramid_patch):
            t = head(layer_outputs[layer_idx][:, 1:])
            pyramid.append(tokens_to_images(t, p, self.grid, e.channels))
        return ReconstructionBundle(full=full, pyramid=pyramid, decoder_input_tokens=decoder_input)

    def forward(self, images: torch.Tensor, plan: MaskPlan | None = None) -> ReconstructionBundle:
        tokens, intermediates = self.encode(images, plan)
        return self.decode(tokens, plan, intermediates if self.decoder_cfg.msg_enabled else None)

    def reconstruct(self, images: torch.Tensor, plan: MaskPlan | None = None) -> torch.Tensor:
        return self.forward(images, plan).full

    def extract_cls_attention(self, images: torch.Tensor) -> AttentionMaps:
        """Self-attention of the class token in the last encoder layer, unmasked input."""
        plan = full_visibility_plan(self.num_patches, images.shape[0])
        _, _, attn = self._forward_encoder(images, plan, return_weights=True)
        return AttentionMaps(weights=attn, cls_row=attn[:, :, 0, 1:])
