"""Minimal ViT backbone with timm-compatible parameter naming.

Using the same state-dict layout as the reference checkpoints
(patch_embed.proj, cls_token, pos_embed, blocks.N.{norm1,attn,norm2,mlp},
norm) keeps loading mostly mechanical: released DINO/MAE/iBOT weights map
1:1, DINOv2 additionally needs the LayerScale gammas, torchvision
supervised weights go through a small key remap.
"""

from __future__ import annotations

import math

import torch
from torch import nn
import torch.nn.functional as F


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads:
            raise ValueError("dim must divide num_heads")
        self.num_heads = num_heads
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, d // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)
        out = F.scaled_dot_product_attention(q, k, v)
        return self.proj(out.transpose(1, 2).reshape(b, n, d))


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class LayerScale(nn.Module):
    def __init__(self, dim: int, init: float = 1e-5):
        super().__init__()
        self.gamma = nn.Parameter(init * torch.ones(dim))

    def forward(self, x):
        return x * self.gamma


class Block(nn.Module):
    """Pre-norm transformer block, optionally with LayerScale (DINOv2)."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0,
                 layerscale: bool = False):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, num_heads)
        self.ls1 = LayerScale(dim) if layerscale else nn.Identity()
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))
        self.ls2 = LayerScale(dim) if layerscale else nn.Identity()

    def forward(self, x):
        x = x + self.ls1(self.attn(self.norm1(x)))
        return x + self.ls2(self.mlp(self.norm2(x)))


class PatchEmbed(nn.Module):
    def __init__(self, patch_size: int, dim: int, in_chans: int = 3):
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Conv2d(in_chans, dim, kernel_size=patch_size,
                              stride=patch_size)

    def forward(self, x):
        x = self.proj(x)  # (B, D, Hp, Wp)
        return x.flatten(2).transpose(1, 2)


class VisionTransformer(nn.Module):
    """Encoder that can stop at any depth and expose LN-normalized tokens."""

    def __init__(self, image_size: int = 224, patch_size: int = 16,
                 dim: int = 768, depth: int = 12, num_heads: int = 12,
                 mlp_ratio: float = 4.0, layerscale: bool = False):
        super().__init__()
        if image_size % patch_size:
            raise ValueError("image_size must divide patch_size")
        self.patch_size = patch_size
        self.dim = dim
        self.depth = depth
        self.grid = image_size // patch_size
        self.patch_embed = PatchEmbed(patch_size, dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(
            torch.empty(1, self.grid * self.grid + 1, dim).normal_(std=0.02))
        self.blocks = nn.ModuleList(
            Block(dim, num_heads, mlp_ratio, layerscale) for _ in range(depth))
        self.norm = nn.LayerNorm(dim, eps=1e-6)

    def _pos_embed_for(self, hp: int, wp: int) -> torch.Tensor:
        """Positional embeddings, bilinearly interpolated off-grid sizes."""
        if hp == self.grid and wp == self.grid:
            return self.pos_embed
        cls_pos = self.pos_embed[:, :1]
        grid_pos = self.pos_embed[:, 1:].reshape(
            1, self.grid, self.grid, self.dim).permute(0, 3, 1, 2)
        grid_pos = F.interpolate(grid_pos, size=(hp, wp), mode="bilinear",
                                 align_corners=False)
        grid_pos = grid_pos.permute(0, 2, 3, 1).reshape(1, hp * wp, self.dim)
        return torch.cat([cls_pos, grid_pos], dim=1)

    def tokens(self, images: torch.Tensor, layer: int,
               normalized: bool = True):
        """(cls, patches) after `layer` blocks; patches shaped (B, Hp, Wp, D).

        The model's final LayerNorm is applied to inner-layer tokens too,
        matching the extraction protocol.
        """
        out = self.tokens_multi(images, (layer,), normalized)
        return out[layer]

    def tokens_multi(self, images: torch.Tensor, layers,
                     normalized: bool = True):
        """One forward pass, snapshots at several depths: {layer: (cls,
        patches)}; the final LayerNorm is applied to every snapshot."""
        wanted = sorted(set(layers))
        if not wanted or wanted[0] < 1 or wanted[-1] > self.depth:
            raise ValueError(f"layers must be within [1, {self.depth}]")
        b, _, h, w = images.shape
        if h % self.patch_size or w % self.patch_size:
            raise ValueError("image dims must divide the patch size")
        hp, wp = h // self.patch_size, w // self.patch_size
        x = self.patch_embed(images)
        x = torch.cat([self.cls_token.expand(b, -1, -1), x], dim=1)
        x = x + self._pos_embed_for(hp, wp)
        out = {}
        for depth, block in enumerate(self.blocks[:wanted[-1]], start=1):
            x = block(x)
            if depth in wanted:
                snap = self.norm(x) if normalized else x
                out[depth] = (snap[:, 0],
                              snap[:, 1:].reshape(b, hp, wp, self.dim))
        return out


def sincos_pos_embed(dim: int, hp: int, wp: int, cls_token: bool = True):
    """Fixed 2-D sine-cosine positional table (decoder side of MAE)."""
    if dim % 4:
        raise ValueError("dim must be a multiple of 4")
    quarter = dim // 4
    omega = 1.0 / 10000 ** (torch.arange(quarter, dtype=torch.float64) / quarter)
    ys, xs = torch.meshgrid(torch.arange(hp, dtype=torch.float64),
                            torch.arange(wp, dtype=torch.float64),
                            indexing="ij")
    parts = []
    for coords in (ys.reshape(-1), xs.reshape(-1)):
        angles = coords[:, None] * omega[None, :]
        parts.extend([torch.sin(angles), torch.cos(angles)])
    table = torch.cat(parts, dim=1).to(torch.float32)
    if cls_token:
        table = torch.cat([torch.zeros(1, dim), table], dim=0)
    return table.unsqueeze(0)
