"""Class taxonomy, patch-label rasterization, box annotations, ROI pooling.

Pixel masks are single-channel PNGs whose pixel value is the class id.
Box annotations are rotated quadrilaterals read from a line-delimited
text file; geometric predicates are evaluated with shapely in double
arithmetic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import shapely
from PIL import Image
from shapely.geometry import Polygon, box as shapely_box


@dataclass(frozen=True)
class ClassDef:
    class_id: int
    name: str
    supercategory_id: int


@dataclass(frozen=True)
class ClassTaxonomy:
    classes: tuple[ClassDef, ...]
    background_id: int = 0
    ignore_id: int | None = None

    def __post_init__(self):
        ids = [c.class_id for c in self.classes]
        if sorted(ids) != list(range(len(ids))):
            raise ValueError("class_ids must be unique and dense from 0")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def name_of(self, class_id: int) -> str:
        return self.classes[class_id].name

    def supercategory_of(self, class_id: int) -> int:
        return self.classes[class_id].supercategory_id

    def supercategory_ids(self) -> np.ndarray:
        """Vector mapping class_id -> supercategory_id."""
        return np.array([c.supercategory_id for c in self.classes], dtype=np.int64)


def default_taxonomy(num_classes: int) -> ClassTaxonomy:
    """Identity taxonomy for label-only datasets (class 0 = background)."""
    classes = tuple(ClassDef(i, f"class_{i}", i) for i in range(num_classes))
    return ClassTaxonomy(classes=classes, background_id=0)


def read_taxonomy(path) -> ClassTaxonomy:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    classes = tuple(ClassDef(c["id"], c["name"], c["supercategory"])
                    for c in doc["classes"])
    return ClassTaxonomy(classes=classes,
                         background_id=doc.get("background_id", 0),
                         ignore_id=doc.get("ignore_id"))


def write_taxonomy(tax: ClassTaxonomy, path) -> None:
    doc = {
        "background_id": tax.background_id,
        "ignore_id": tax.ignore_id,
        "classes": [{"id": c.class_id, "name": c.name,
                     "supercategory": c.supercategory_id} for c in tax.classes],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


@dataclass
class PatchLabelGrid:
    image_id: str
    labels: np.ndarray  # (Hp, Wp) int


@dataclass(frozen=True)
class BoxAnnotation:
    """Rotated box given by 4 corner points in pixel coordinates."""

    image_id: str
    corners: tuple[tuple[float, float], ...]
    class_id: int
    instance_id: int | None = None
    frame_index: int | None = None

    def polygon(self) -> Polygon:
        poly = Polygon(self.corners)
        if not poly.is_valid or poly.area <= 0.0:
            raise ValueError(
                f"degenerate box for image {self.image_id!r}: {self.corners}")
        return poly


def read_mask(path) -> np.ndarray:
    """Read an 8/16-bit single-channel PNG of class ids."""
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected single-channel mask, got {arr.shape}")
    return arr.astype(np.int32)


def write_mask(mask: np.ndarray, path) -> None:
    mask = np.asarray(mask)
    if mask.max(initial=0) > 65535 or mask.min(initial=0) < 0:
        raise ValueError("class ids must fit in 16 bits")
    if mask.max(initial=0) > 255:
        Image.fromarray(mask.astype(np.uint16)).save(path)
    else:
        Image.fromarray(mask.astype(np.uint8), mode="L").save(path)


def rasterize_labels(pixel_mask: np.ndarray, patch_pixels: int,
                     image_id: str = "") -> PatchLabelGrid:
    """Modal class per patch_pixels x patch_pixels block, ties to lowest id."""
    mask = np.asarray(pixel_mask)
    h, w = mask.shape
    if h % patch_pixels or w % patch_pixels:
        raise ValueError(
            f"mask {h}x{w} not divisible by patch_pixels={patch_pixels}")
    hp, wp = h // patch_pixels, w // patch_pixels
    blocks = (mask.reshape(hp, patch_pixels, wp, patch_pixels)
                  .transpose(0, 2, 1, 3).reshape(hp * wp, -1))
    n_cls = int(mask.max()) + 1
    offsets = np.arange(hp * wp, dtype=np.int64)[:, None] * n_cls
    counts = np.bincount((blocks.astype(np.int64) + offsets).ravel(),
                         minlength=hp * wp * n_cls).reshape(hp * wp, n_cls)
    labels = counts.argmax(axis=1).astype(np.int32).reshape(hp, wp)
    return PatchLabelGrid(image_id=image_id, labels=labels)


def box_presence(box: BoxAnnotation, tile: tuple[float, float, float, float]) -> bool:
    """True iff >= 1/3 of the box polygon's area falls inside the tile rect.

    tile: (origin_x, origin_y, width, height).
    """
    poly = box.polygon()
    ox, oy, w, h = tile
    rect = shapely_box(ox, oy, ox + w, oy + h)
    return poly.intersection(rect).area >= poly.area / 3.0


def patch_centers(grid: tuple[int, int], patch_pixels: int):
    """Pixel coordinates (x, y) of every patch center, row-major."""
    hp, wp = grid
    ys = (np.arange(hp) + 0.5) * patch_pixels
    xs = (np.arange(wp) + 0.5) * patch_pixels
    xx, yy = np.meshgrid(xs, ys)
    return xx.ravel(), yy.ravel()


def patch_object_labels(boxes, taxonomy: ClassTaxonomy, grid: tuple[int, int],
                        patch_pixels: int, image_id: str = "") -> PatchLabelGrid:
    """Label each patch whose center a box polygon covers.

    Overlaps resolve to the smallest box area (then lowest class id), so
    fine objects are not absorbed by large context boxes.
    """
    hp, wp = grid
    labels = np.full(hp * wp, taxonomy.background_id, dtype=np.int32)
    xs, ys = patch_centers(grid, patch_pixels)
    best_area = np.full(hp * wp, np.inf)
    best_class = np.full(hp * wp, np.iinfo(np.int32).max, dtype=np.int64)
    for ann in boxes:
        poly = ann.polygon()
        covered = shapely.intersects_xy(poly, xs, ys)
        area = poly.area
        better = covered & ((area < best_area)
                            | ((area == best_area) & (ann.class_id < best_class)))
        labels[better] = ann.class_id
        best_area[better] = area
        best_class[better] = ann.class_id
    return PatchLabelGrid(image_id=image_id, labels=labels.reshape(hp, wp))


def roi_pool(shard, box: BoxAnnotation, patch_pixels: int) -> np.ndarray:
    """Pool the feature grid over the box's axis-aligned extent.

    The extent maps to continuous patch coordinates and is treated as a
    single cell sampled at its 2x2 regularly spaced interior points; each
    sample bilinearly interpolates the four surrounding patch vectors with
    edge clamping. Returns the mean of the four samples.
    """
    grid = shard.grid
    hp, wp, _ = grid.shape
    xs = [c[0] for c in box.corners]
    ys = [c[1] for c in box.corners]
    x0, x1 = min(xs) / patch_pixels, max(xs) / patch_pixels
    y0, y1 = min(ys) / patch_pixels, max(ys) / patch_pixels
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"zero-area box for image {box.image_id!r}")
    if x1 <= 0 or y1 <= 0 or x0 >= wp or y0 >= hp:
        raise ValueError(f"box entirely outside image {box.image_id!r}")
    w, h = x1 - x0, y1 - y0
    samples = []
    for iy in range(2):
        for ix in range(2):
            sx = x0 + (ix + 0.5) * w / 2.0
            sy = y0 + (iy + 0.5) * h / 2.0
            samples.append(_bilinear(grid, sx, sy))
    return np.mean(samples, axis=0)


def _bilinear(grid: np.ndarray, x: float, y: float) -> np.ndarray:
    """Sample at continuous patch coords; vectors sit at patch centers."""
    hp, wp, _ = grid.shape
    fx = min(max(x - 0.5, 0.0), wp - 1.0)
    fy = min(max(y - 0.5, 0.0), hp - 1.0)
    c0, r0 = int(np.floor(fx)), int(np.floor(fy))
    c1, r1 = min(c0 + 1, wp - 1), min(r0 + 1, hp - 1)
    ax, ay = fx - c0, fy - r0
    top = (1 - ax) * grid[r0, c0] + ax * grid[r0, c1]
    bot = (1 - ax) * grid[r1, c0] + ax * grid[r1, c1]
    return (1 - ay) * top + ay * bot


def read_annotations(path) -> list[BoxAnnotation]:
    """Line-delimited annotations:
    image_id,frame_index,instance_id,class_id,x1,y1,x2,y2,x3,y3,x4,y4

    frame_index and instance_id may be empty. Lines starting with '#' are
    skipped.
    """
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 12:
                raise ValueError(f"{path}:{lineno}: expected 12 fields, "
                                 f"got {len(parts)}")
            image_id, frame_s, inst_s, class_s = parts[:4]
            coords = [float(v) for v in parts[4:]]
            corners = tuple((coords[2 * i], coords[2 * i + 1]) for i in range(4))
            out.append(BoxAnnotation(
                image_id=image_id,
                corners=corners,
                class_id=int(class_s),
                instance_id=int(inst_s) if inst_s else None,
                frame_index=int(frame_s) if frame_s else None,
            ))
    return out


def write_annotations(annotations, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in annotations:
            coords = ",".join(f"{v:g}" for corner in a.corners for v in corner)
            frame = "" if a.frame_index is None else str(a.frame_index)
            inst = "" if a.instance_id is None else str(a.instance_id)
            fh.write(f"{a.image_id},{frame},{inst},{a.class_id},{coords}\n")
