"""Embedding shard data model, binary on-disk format, and synthetic fixtures.

A dataset directory holds one human-readable manifest (JSON) plus one
binary file per image. Shard payloads are 32-bit little-endian IEEE-754
floats in row-major, feature-minor order so they can be memory-mapped and
read from any language.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PLNS"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIII")  # magic, version, flags, Hp, Wp, D, id length
FLAG_IMAGE_VECTOR = 0x1

MANIFEST_NAME = "manifest.json"


class ShardFormatError(ValueError):
    """Bad magic, version, or otherwise unparseable shard file."""


class ShardCorruptionError(ValueError):
    """Shard payload shorter than the header promises."""


@dataclass(frozen=True)
class EmbedManifest:
    """Dataset-level constants shared by every shard in a directory."""

    model_id: str
    layer: int
    feature_dim: int
    grid: tuple[int, int]  # (rows Hp, cols Wp)
    patch_pixels: int
    normalized: bool
    dataset_id: str
    image_count: int

    def __post_init__(self):
        if not (1 <= self.layer <= 12):
            raise ValueError(f"layer must be in [1, 12], got {self.layer}")
        if self.feature_dim <= 0:
            raise ValueError("feature_dim must be positive")
        if self.grid[0] <= 0 or self.grid[1] <= 0:
            raise ValueError("grid dims must be positive")
        if self.patch_pixels <= 0:
            raise ValueError("patch_pixels must be positive")
        if self.image_count < 0:
            raise ValueError("image_count must be non-negative")


@dataclass
class EmbeddingShard:
    """One image's patch grid of feature vectors plus optional image vector."""

    image_id: str
    grid: np.ndarray  # (Hp, Wp, D) float32
    image_vector: np.ndarray | None = None
    source_tile: tuple[int, int, str] | None = None  # (origin_x, origin_y, parent)

    def patches(self) -> np.ndarray:
        """All patch vectors as a (Hp*Wp, D) view."""
        return self.grid.reshape(-1, self.grid.shape[-1])


def _check_shard(manifest: EmbedManifest, shard: EmbeddingShard) -> None:
    hp, wp = manifest.grid
    d = manifest.feature_dim
    if shard.grid.shape != (hp, wp, d):
        raise ValueError(
            f"shard {shard.image_id!r}: grid shape {shard.grid.shape} does not "
            f"match manifest ({hp}, {wp}, {d})")
    if not np.all(np.isfinite(shard.grid)):
        raise ValueError(f"shard {shard.image_id!r}: non-finite values in grid")
    if shard.image_vector is not None:
        if shard.image_vector.shape != (d,):
            raise ValueError(
                f"shard {shard.image_id!r}: image_vector shape "
                f"{shard.image_vector.shape} does not match D={d}")
        if not np.all(np.isfinite(shard.image_vector)):
            raise ValueError(
                f"shard {shard.image_id!r}: non-finite values in image_vector")


def shard_bytes(shard: EmbeddingShard) -> bytes:
    """Serialize one shard to the binary layout."""
    hp, wp, d = shard.grid.shape
    id_bytes = shard.image_id.encode("utf-8")
    flags = FLAG_IMAGE_VECTOR if shard.image_vector is not None else 0
    parts = [_HEADER.pack(MAGIC, VERSION, flags, hp, wp, d, len(id_bytes)), id_bytes]
    if shard.image_vector is not None:
        parts.append(np.ascontiguousarray(shard.image_vector, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(shard.grid, dtype="<f4").tobytes())
    return b"".join(parts)


def shard_from_bytes(raw: bytes) -> EmbeddingShard:
    """Parse one shard file; raises ShardFormatError / ShardCorruptionError."""
    if len(raw) < _HEADER.size:
        raise ShardCorruptionError("file shorter than the fixed header")
    magic, version, flags, hp, wp, d, id_len = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ShardFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ShardFormatError(f"unsupported version {version}")
    off = _HEADER.size
    if len(raw) < off + id_len:
        raise ShardCorruptionError("truncated image_id")
    image_id = raw[off:off + id_len].decode("utf-8")
    off += id_len
    image_vector = None
    if flags & FLAG_IMAGE_VECTOR:
        if len(raw) < off + 4 * d:
            raise ShardCorruptionError(f"shard {image_id!r}: truncated image_vector")
        image_vector = np.frombuffer(raw, dtype="<f4", count=d, offset=off).copy()
        off += 4 * d
    need = hp * wp * d * 4
    if len(raw) - off < need:
        raise ShardCorruptionError(
            f"shard {image_id!r}: payload is {len(raw) - off} bytes, need {need}")
    grid = np.frombuffer(raw, dtype="<f4", count=hp * wp * d, offset=off)
    return EmbeddingShard(image_id=image_id, grid=grid.reshape(hp, wp, d).copy(),
                          image_vector=image_vector)


def _shard_filename(index: int) -> str:
    return f"shard_{index:06d}.plns"


def write_shards(manifest: EmbedManifest, shards, path) -> None:
    """Write manifest plus one binary file per shard into a directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, shard in enumerate(shards):
        _check_shard(manifest, shard)
        name = _shard_filename(i)
        (path / name).write_bytes(shard_bytes(shard))
        entry = {"file": name, "image_id": shard.image_id}
        if shard.source_tile is not None:
            x, y, parent = shard.source_tile
            entry["source_tile"] = {"x": int(x), "y": int(y), "parent": parent}
        entries.append(entry)
    doc = {
        "model_id": manifest.model_id,
        "layer": manifest.layer,
        "feature_dim": manifest.feature_dim,
        "grid": list(manifest.grid),
        "patch_pixels": manifest.patch_pixels,
        "normalized": manifest.normalized,
        "dataset_id": manifest.dataset_id,
        "image_count": manifest.image_count,
        "shards": entries,
    }
    with open(path / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_manifest(path) -> EmbedManifest:
    with open(Path(path) / MANIFEST_NAME, encoding="utf-8") as fh:
        doc = json.load(fh)
    return EmbedManifest(
        model_id=doc["model_id"],
        layer=doc["layer"],
        feature_dim=doc["feature_dim"],
        grid=(doc["grid"][0], doc["grid"][1]),
        patch_pixels=doc["patch_pixels"],
        normalized=doc["normalized"],
        dataset_id=doc["dataset_id"],
        image_count=doc["image_count"],
    )


def read_shards(path, image_ids=None):
    """Read (manifest, shards) from a directory, in manifest order.

    image_ids: optional collection restricting which shards to load.
    """
    path = Path(path)
    manifest = read_manifest(path)
    with open(path / MANIFEST_NAME, encoding="utf-8") as fh:
        doc = json.load(fh)
    wanted = None if image_ids is None else set(image_ids)
    shards = []
    for entry in doc["shards"]:
        if wanted is not None and entry["image_id"] not in wanted:
            continue
        shard = shard_from_bytes((path / entry["file"]).read_bytes())
        if shard.image_id != entry["image_id"]:
            raise ShardFormatError(
                f"{entry['file']}: image_id {shard.image_id!r} does not match "
                f"manifest entry {entry['image_id']!r}")
        tile = entry.get("source_tile")
        if tile is not None:
            shard.source_tile = (tile["x"], tile["y"], tile["parent"])
        _check_shard(manifest, shard)
        shards.append(shard)
    return manifest, shards


@dataclass(frozen=True)
class SynthSpec:
    """Gaussian-mixture fixture: class signal dims plus class-independent
    high-variance noise dims occupying the last noise_dims coordinates."""

    classes: int
    signal_dims: int
    noise_dims: int
    noise_sigma: float
    class_separation: float
    seed: int
    images: int
    grid: tuple[int, int]
    dataset_id: str = "synth"

    def __post_init__(self):
        if self.classes <= 0 or self.signal_dims <= 0 or self.images <= 0:
            raise ValueError("classes, signal_dims and images must be positive")
        if self.noise_dims < 0:
            raise ValueError("noise_dims must be non-negative")
        if self.noise_sigma <= 0 or self.class_separation <= 0:
            raise ValueError("noise_sigma and class_separation must be positive")
        if self.grid[0] <= 0 or self.grid[1] <= 0:
            raise ValueError("grid dims must be positive")

    @property
    def feature_dim(self) -> int:
        return self.signal_dims + self.noise_dims


def synth_shards(spec: SynthSpec):
    """Deterministic synthetic dataset: (manifest, shards, label grids).

    Patch classes are uniform; signal dims are unit-variance Gaussians
    around a class mean of norm class_separation; the trailing noise dims
    are zero-mean Gaussians with std noise_sigma, independent of class.
    """
    rng = np.random.default_rng(spec.seed)
    hp, wp = spec.grid
    d = spec.feature_dim

    means = rng.standard_normal((spec.classes, spec.signal_dims))
    means *= spec.class_separation / np.linalg.norm(means, axis=1, keepdims=True)
    means = means.astype(np.float32)

    manifest = EmbedManifest(
        model_id="synth", layer=12, feature_dim=d, grid=spec.grid,
        patch_pixels=1, normalized=False, dataset_id=spec.dataset_id,
        image_count=spec.images)

    shards, label_grids = [], []
    for i in range(spec.images):
        labels = rng.integers(0, spec.classes, size=(hp, wp))
        signal = means[labels] + rng.standard_normal(
            (hp, wp, spec.signal_dims)).astype(np.float32)
        if spec.noise_dims:
            noise = rng.normal(0.0, spec.noise_sigma,
                               size=(hp, wp, spec.noise_dims)).astype(np.float32)
            grid = np.concatenate([signal, noise], axis=-1)
        else:
            grid = signal
        shards.append(EmbeddingShard(image_id=f"img_{i:05d}",
                                     grid=np.ascontiguousarray(grid, dtype=np.float32)))
        label_grids.append(labels.astype(np.int32))
    return manifest, shards, label_grids
