"""Masked-autoencoder decoder and reconstruction from stored shards.

The decoder consumes encoder-space tokens exactly as stored in a shard
dataset, so reconstructions can be rendered without re-running the
encoder: optionally zero a set of feature indices, optionally keep only a
random fraction of patches (mask tokens fill the rest), decode, and
un-patchify to PNG.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from torch import nn
from PIL import Image

from .families import IMAGENET_MEAN, IMAGENET_STD, ModelSpec, build_backbone
from .shardio import read_back
from .vit import Block, sincos_pos_embed


class MaskedAutoencoder(nn.Module):
    """Encoder backbone plus the lightweight reconstruction decoder;
    parameter naming follows the reference release."""

    def __init__(self, encoder, decoder_dim: int = 512, decoder_depth: int = 8,
                 decoder_heads: int = 16):
        super().__init__()
        self.encoder = encoder
        p = encoder.patch_size
        n = encoder.grid * encoder.grid
        self.decoder_embed = nn.Linear(encoder.dim, decoder_dim)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, decoder_dim))
        self.decoder_pos_embed = nn.Parameter(
            sincos_pos_embed(decoder_dim, encoder.grid, encoder.grid),
            requires_grad=False)
        self.decoder_blocks = nn.ModuleList(
            Block(decoder_dim, decoder_heads) for _ in range(decoder_depth))
        self.decoder_norm = nn.LayerNorm(decoder_dim, eps=1e-6)
        self.decoder_pred = nn.Linear(decoder_dim, p * p * 3)
        self.patch_count = n

    def decode(self, cls: torch.Tensor, patches: torch.Tensor,
               keep: torch.Tensor | None = None) -> torch.Tensor:
        """Decode (1, N, D) encoder patch tokens to per-patch pixels.

        keep: optional bool mask over patch positions; dropped positions
        are replaced by the learned mask token (in decoder space).
        """
        seq = torch.cat([cls.unsqueeze(1), patches], dim=1)
        x = self.decoder_embed(seq)
        if keep is not None:
            fill = self.mask_token.to(x.dtype)
            mask = torch.cat([torch.ones(1, dtype=torch.bool), keep])
            x = torch.where(mask.view(1, -1, 1), x, fill)
        x = x + self.decoder_pos_embed
        for block in self.decoder_blocks:
            x = block(x)
        x = self.decoder_norm(x)
        return self.decoder_pred(x)[:, 1:]  # drop the cls position


def build_mae(spec: ModelSpec) -> MaskedAutoencoder:
    if spec.family != "mae":
        raise ValueError(f"reconstruction needs the mae family, got "
                         f"{spec.family!r}")
    encoder = build_backbone(spec)
    dec = spec.arch.get("decoder", {})
    mae = MaskedAutoencoder(encoder,
                            decoder_dim=dec.get("dim", 512),
                            decoder_depth=dec.get("depth", 8),
                            decoder_heads=dec.get("heads", 16))
    if spec.checkpoint is not None:
        from .families import load_checkpoint, remap_state_dict
        state = remap_state_dict(load_checkpoint(spec.checkpoint,
                                                 spec.checkpoint_sha256))
        decoder_state = {k: v for k, v in state.items()
                         if k.startswith(("decoder_", "mask_token"))}
        mae.load_state_dict(decoder_state, strict=False)
    mae.eval()
    return mae


def unpatchify(pred: torch.Tensor, hp: int, wp: int, p: int) -> np.ndarray:
    """(1, Hp*Wp, p*p*3) -> (Hp*p, Wp*p, 3) float array."""
    x = pred.reshape(hp, wp, p, p, 3)
    return x.permute(0, 2, 1, 3, 4).reshape(hp * p, wp * p, 3).numpy()


def load_zero_indices(mask_path) -> np.ndarray:
    """Feature indices to zero = removed set of a feature-mask JSON file."""
    with open(mask_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    retained = set(doc["retained"])
    return np.array([i for i in range(doc["dim"]) if i not in retained],
                    dtype=np.int64)


def reconstruct(spec: ModelSpec, shard_dir, out_dir,
                zero_mask_path=None, mask_ratio: float = 0.0,
                seed: int = 0) -> list[Path]:
    """Render PNG reconstructions for every shard in a dataset directory."""
    if not 0.0 <= mask_ratio < 1.0:
        raise ValueError("mask_ratio must be in [0, 1)")
    mae = build_mae(spec)
    manifest, records = read_back(shard_dir)
    hp, wp = manifest["grid"]
    p = manifest["patch_pixels"]
    if hp * wp != mae.patch_count:
        raise ValueError(f"shards hold {hp * wp} patches but the decoder "
                         f"expects {mae.patch_count}")
    zero_idx = None
    if zero_mask_path is not None:
        zero_idx = load_zero_indices(zero_mask_path)
        if zero_idx.size and zero_idx.max() >= manifest["feature_dim"]:
            raise ValueError("zero mask does not match the shard feature dim")
    mean = np.asarray(spec.normalization[0], dtype=np.float32)
    std = np.asarray(spec.normalization[1], dtype=np.float32)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    generator = torch.Generator().manual_seed(seed)
    written = []
    with torch.no_grad():
        for record in records:
            patches = torch.from_numpy(
                record.grid.reshape(1, hp * wp, -1).astype(np.float32))
            if record.image_vector is not None:
                cls = torch.from_numpy(record.image_vector.astype(np.float32))
                cls = cls.unsqueeze(0)
            else:
                cls = torch.zeros(1, patches.shape[-1])
            if zero_idx is not None and zero_idx.size:
                patches[:, :, zero_idx] = 0.0
                cls[:, zero_idx] = 0.0
            keep = None
            if mask_ratio > 0.0:
                n_keep = max(1, int(round(hp * wp * (1.0 - mask_ratio))))
                order = torch.randperm(hp * wp, generator=generator)
                keep = torch.zeros(hp * wp, dtype=torch.bool)
                keep[order[:n_keep]] = True
            pred = mae.decode(cls, patches, keep=keep)
            img = unpatchify(pred, hp, wp, p)
            img = img * std + mean  # undo input standardization
            img = np.clip(img * 255.0, 0, 255).astype(np.uint8)
            dest = out_dir / f"{record.image_id.replace('/', '__')}.png"
            Image.fromarray(img, mode="RGB").save(dest)
            written.append(dest)
    return written
