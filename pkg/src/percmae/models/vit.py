"""Transformer building blocks shared by the encoder and decoder."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from ..exceptions import ConfigurationError


def sincos_pos_embed(width: int, grid_h: int, grid_w: int) -> torch.Tensor:
    """Fixed 2D sin-cos positional table of shape (1, 1 + gh*gw, width).

    Row 0 (the class-token slot) is zeros. ``width`` must be divisible by 4
    so the table splits evenly into h/w sin/cos quarters.
    """
    if width % 4 != 0:
        raise ConfigurationError(f"embedding width must be divisible by 4, got {width}")
    half = width // 2

    def axis_embed(positions: np.ndarray) -> np.ndarray:
        omega = np.arange(half // 2, dtype=np.float64)
        omega = 1.0 / 10000 ** (omega / (half / 2.0))
        out = np.einsum("p,d->pd", positions, omega)
        return np.concatenate([np.sin(out), np.cos(out)], axis=1)

    ys, xs = np.meshgrid(np.arange(grid_h, dtype=np.float64), np.arange(grid_w, dtype=np.float64), indexing="ij")
    table = np.concatenate([axis_embed(ys.reshape(-1)), axis_embed(xs.reshape(-1))], axis=1)
    table = np.concatenate([np.zeros((1, width)), table], axis=0)
    return torch.from_numpy(table).float().unsqueeze(0)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ConfigurationError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        b, t, d = x.shape
        qkv = self.qkv(x).reshape(b, t, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t, d)
        out = self.proj(out)
        return (out, attn) if return_weights else (out, None)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden_ratio: float = 4.0):
        super().__init__()
        hidden = int(dim * hidden_ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        attn_out, weights = self.attn(self.norm1(x), return_weights=return_weights)
        x = x + attn_out
        x = x + self.mlp(self.norm2(x))
        return (x, weights) if return_weights else x
