"""Image preprocessing, tiling, and shard export."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .families import ModelSpec, build_backbone
from .shardio import ShardRecord, ShardWriter

TILE = 256
MODEL_INPUT = 224
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


def list_images(source) -> list[Path]:
    source = Path(source)
    if source.is_dir():
        return sorted(p for p in source.rglob("*")
                      if p.suffix.lower() in IMAGE_SUFFIXES)
    return [source]


def load_image(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)


def resize_bilinear(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    return np.asarray(Image.fromarray(img).resize((size[1], size[0]),
                                                  Image.BILINEAR))


def to_tensor(img: np.ndarray, normalization) -> torch.Tensor:
    mean, std = normalization
    data = img.astype(np.float32) / 255.0
    data = (data - np.asarray(mean, dtype=np.float32)) \
        / np.asarray(std, dtype=np.float32)
    return torch.from_numpy(data.transpose(2, 0, 1)).unsqueeze(0)


def iter_tiles(img: np.ndarray, image_id: str):
    """(tile_id, tile-resized-to-224, source_tile) per 256px tile."""
    h, w, _ = img.shape
    if h % TILE or w % TILE:
        raise ValueError(f"{image_id}: {h}x{w} not divisible into "
                         f"{TILE}x{TILE} tiles; pre-crop the input")
    for r in range(h // TILE):
        for c in range(w // TILE):
            tile = img[r * TILE:(r + 1) * TILE, c * TILE:(c + 1) * TILE]
            tile = resize_bilinear(tile, (MODEL_INPUT, MODEL_INPUT))
            yield (f"{image_id}_tile_{r:02d}_{c:02d}", tile,
                   (c * TILE, r * TILE, image_id))


def extract(spec: ModelSpec, images, tiling: str, out_root,
            dataset_id: str = "dataset") -> dict[int, Path]:
    """Export patch (and [CLS]) tokens for every requested layer.

    Returns {layer: dataset directory}. One shard per image (full_image)
    or per 256px tile resized to 224 (tiled_256).
    """
    if tiling not in ("tiled_256", "full_image"):
        raise ValueError(f"unknown tiling mode {tiling!r}")
    model = build_backbone(spec)
    paths = [Path(p) for p in images]
    out_root = Path(out_root)

    inputs = []
    first_grid = None
    for path in paths:
        img = load_image(path)
        image_id = path.stem
        if tiling == "tiled_256":
            inputs.extend(iter_tiles(img, image_id))
        else:
            if img.shape[0] % spec.patch_size or img.shape[1] % spec.patch_size:
                raise ValueError(f"{image_id}: {img.shape[0]}x{img.shape[1]} "
                                 f"does not divide patch size {spec.patch_size}")
            inputs.append((image_id, img, None))
        grid = (inputs[-1][1].shape[0] // spec.patch_size,
                inputs[-1][1].shape[1] // spec.patch_size)
        if first_grid is None:
            first_grid = grid
        elif grid != first_grid:
            raise ValueError("full_image inputs must share dimensions; "
                             f"got {grid} vs {first_grid}")

    writers = {}
    for layer in spec.layers:
        writers[layer] = ShardWriter(
            out_root / f"layer{layer:02d}", model_id=spec.family, layer=layer,
            feature_dim=model.dim, grid=first_grid,
            patch_pixels=spec.patch_size, normalized=True,
            dataset_id=dataset_id)

    with torch.no_grad():
        for image_id, img, source_tile in inputs:
            batch = to_tensor(img, spec.normalization)
            per_layer = model.tokens_multi(batch, spec.layers)
            for layer, (cls, patches) in per_layer.items():
                writers[layer].add(ShardRecord(
                    image_id=image_id,
                    grid=patches[0].numpy().astype(np.float32),
                    image_vector=cls[0].numpy().astype(np.float32),
                    source_tile=source_tile))
    for writer in writers.values():
        writer.close()
    return {layer: w.out_dir for layer, w in writers.items()}
