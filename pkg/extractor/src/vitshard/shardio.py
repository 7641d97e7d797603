"""Writer for the patchlens shard interchange format.

Layout (little-endian): magic "PLNS" | version u16=1 | flags u16 (bit 0:
image vector present) | Hp u32 | Wp u32 | D u32 | image-id length u32 |
image-id UTF-8 | optional image vector (D f32) | grid (Hp*Wp*D f32,
row-major, feature minor). The manifest is a JSON file naming the dataset
constants plus the ordered shard file list.

This is a deliberate re-implementation against the documented byte layout:
the evaluation engine is consumed only through its file interfaces.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"PLNS"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIII")
FLAG_IMAGE_VECTOR = 0x1


@dataclass
class ShardRecord:
    image_id: str
    grid: np.ndarray                      # (Hp, Wp, D) float32
    image_vector: np.ndarray | None = None
    source_tile: tuple[int, int, str] | None = None


def encode_shard(record: ShardRecord) -> bytes:
    grid = np.ascontiguousarray(record.grid, dtype="<f4")
    if grid.ndim != 3:
        raise ValueError(f"{record.image_id}: grid must be (Hp, Wp, D)")
    if not np.all(np.isfinite(grid)):
        raise ValueError(f"{record.image_id}: non-finite values in grid")
    hp, wp, d = grid.shape
    id_bytes = record.image_id.encode("utf-8")
    flags = 0
    parts = []
    if record.image_vector is not None:
        vec = np.ascontiguousarray(record.image_vector, dtype="<f4")
        if vec.shape != (d,):
            raise ValueError(f"{record.image_id}: image vector must be ({d},)")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"{record.image_id}: non-finite image vector")
        flags |= FLAG_IMAGE_VECTOR
        parts.append(vec.tobytes())
    header = _HEADER.pack(MAGIC, VERSION, flags, hp, wp, d, len(id_bytes))
    return b"".join([header, id_bytes, *parts, grid.tobytes()])


class ShardWriter:
    """Streams shards into a dataset directory, manifest written on close."""

    def __init__(self, out_dir, model_id: str, layer: int, feature_dim: int,
                 grid: tuple[int, int], patch_pixels: int, normalized: bool,
                 dataset_id: str):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.meta = {
            "model_id": model_id,
            "layer": layer,
            "feature_dim": feature_dim,
            "grid": [grid[0], grid[1]],
            "patch_pixels": patch_pixels,
            "normalized": normalized,
            "dataset_id": dataset_id,
        }
        self.entries = []

    def add(self, record: ShardRecord) -> None:
        hp, wp, d = record.grid.shape
        if [hp, wp] != self.meta["grid"] or d != self.meta["feature_dim"]:
            raise ValueError(
                f"{record.image_id}: shard shape ({hp},{wp},{d}) does not "
                f"match manifest {self.meta['grid']}+{self.meta['feature_dim']}")
        name = f"shard_{len(self.entries):06d}.plns"
        (self.out_dir / name).write_bytes(encode_shard(record))
        entry = {"file": name, "image_id": record.image_id}
        if record.source_tile is not None:
            x, y, parent = record.source_tile
            entry["source_tile"] = {"x": int(x), "y": int(y), "parent": parent}
        self.entries.append(entry)

    def close(self) -> None:
        doc = dict(self.meta)
        doc["image_count"] = len(self.entries)
        doc["shards"] = self.entries
        with open(self.out_dir / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")


def read_back(path):
    """Decode a dataset directory (used by tests to spot-check round trips)."""
    path = Path(path)
    with open(path / "manifest.json", encoding="utf-8") as fh:
        doc = json.load(fh)
    records = []
    for entry in doc["shards"]:
        raw = (path / entry["file"]).read_bytes()
        magic, version, flags, hp, wp, d, id_len = _HEADER.unpack_from(raw, 0)
        if magic != MAGIC or version != VERSION:
            raise ValueError(f"{entry['file']}: bad magic/version")
        off = _HEADER.size
        image_id = raw[off:off + id_len].decode("utf-8")
        off += id_len
        vec = None
        if flags & FLAG_IMAGE_VECTOR:
            vec = np.frombuffer(raw, dtype="<f4", count=d, offset=off).copy()
            off += 4 * d
        grid = np.frombuffer(raw, dtype="<f4", count=hp * wp * d,
                             offset=off).reshape(hp, wp, d).copy()
        records.append(ShardRecord(image_id=image_id, grid=grid,
                                   image_vector=vec))
    return doc, records
