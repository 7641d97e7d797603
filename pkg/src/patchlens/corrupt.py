"""Deterministic image corruptions and geometric patch correspondences.

Images are (H, W, 3) uint8 arrays; all arithmetic runs in float64 and is
clamped and rounded once, on output. Geometric kinds expose their forward
and inverse point transforms so patch-correspondence maps use exactly the
same geometry as the resampled pixels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

PHOTOMETRIC_KINDS = ("box_blur", "gaussian_noise", "band_noise")
GEOMETRIC_KINDS = ("shift", "rotate", "scale")

# Levels used for paper-scale runs; arbitrary values are allowed elsewhere.
PAPER_LEVELS = {
    "box_blur": (10, 20, 30, 40),
    "gaussian_noise": (10, 20, 30, 40),
    "band_noise": (40,),
    "shift": (1, 2, 3, 4),
    "rotate": (5, 10, 15, 20),
    "scale": (0.8, 0.9, 1.1, 1.2),
}

INVALID = (-1, -1)


@dataclass(frozen=True)
class CorruptionSpec:
    """One corruption kind at one level.

    level meaning: blur kernel size k, noise sigma, shift pixels d,
    rotation degrees ccw, or scale factor. band selects the frequency
    annulus for band_noise; seed drives the noise kinds only.
    """

    kind: str
    level: float
    band: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PHOTOMETRIC_KINDS + GEOMETRIC_KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if self.kind == "band_noise":
            if self.band is None or not (0 <= self.band <= 3):
                raise ValueError("band_noise needs band in 0..3")
        elif self.band is not None:
            raise ValueError(f"band only applies to band_noise, not {self.kind}")
        if self.kind == "box_blur" and (self.level < 1 or self.level != int(self.level)):
            raise ValueError("box_blur level must be a positive integer kernel size")
        if self.kind == "scale" and self.level <= 0:
            raise ValueError("scale factor must be positive")
        if self.kind in ("gaussian_noise", "band_noise") and self.level < 0:
            raise ValueError("noise sigma must be non-negative")

    @property
    def geometric(self) -> bool:
        return self.kind in GEOMETRIC_KINDS

    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "level": self.level, "seed": self.seed}
        if self.band is not None:
            doc["band"] = self.band
        return doc

    @classmethod
    def from_dict(cls, doc) -> "CorruptionSpec":
        return cls(kind=doc["kind"], level=doc["level"],
                   band=doc.get("band"), seed=doc.get("seed", 0))


def band_mask(height: int, width: int, band: int) -> np.ndarray:
    """Annular mask in the center-shifted frequency plane.

    Four equal-width annuli up to r_max = half the image diagonal; the last
    band is closed at the top so the four masks partition every bin.
    """
    cy, cx = height // 2, width // 2
    yy, xx = np.ogrid[:height, :width]
    radius = np.hypot(yy - cy, xx - cx)
    r_max = np.hypot(height, width) / 2.0
    lo = band * r_max / 4.0
    hi = (band + 1) * r_max / 4.0
    if band == 3:
        return radius >= lo
    return (radius >= lo) & (radius < hi)


def band_noise_field(height: int, width: int, sigma: float, band: int,
                     seed: int, channels: int = 3) -> np.ndarray:
    """Band-limited Gaussian noise: ifft(fft(noise) * shifted annular mask).

    Returns the real-valued additive field, shape (H, W, channels); it is
    what band_noise adds to the image before clamping.
    """
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=(height, width, channels))
    mask = band_mask(height, width, band)
    out = np.empty_like(noise)
    for c in range(channels):
        spectrum = np.fft.fftshift(np.fft.fft2(noise[:, :, c]))
        out[:, :, c] = np.fft.ifft2(np.fft.ifftshift(spectrum * mask)).real
    return out


def _to_float(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    return img.astype(np.float64)


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def forward_point(spec: CorruptionSpec, x, y, width: int, height: int):
    """Where an original-image point lands in the transformed image."""
    if not spec.geometric:
        return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if spec.kind == "shift":
        return x + spec.level, y + spec.level
    cx, cy = width / 2.0, height / 2.0
    if spec.kind == "scale":
        return cx + spec.level * (x - cx), cy + spec.level * (y - cy)
    # rotate: visually counterclockwise with y pointing down
    t = np.deg2rad(spec.level)
    dx, dy = x - cx, y - cy
    return cx + dx * np.cos(t) + dy * np.sin(t), cy - dx * np.sin(t) + dy * np.cos(t)


def inverse_point(spec: CorruptionSpec, x, y, width: int, height: int):
    """Original-image location of a transformed-image point."""
    if not spec.geometric:
        return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if spec.kind == "shift":
        return x - spec.level, y - spec.level
    cx, cy = width / 2.0, height / 2.0
    if spec.kind == "scale":
        return cx + (x - cx) / spec.level, cy + (y - cy) / spec.level
    t = np.deg2rad(spec.level)
    dx, dy = x - cx, y - cy
    return cx + dx * np.cos(t) - dy * np.sin(t), cy + dx * np.sin(t) + dy * np.cos(t)


def _sample_bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample pixel centers (i+0.5) bilinearly, replicating edges outside."""
    h, w, _ = img.shape
    fx = np.clip(xs - 0.5, 0.0, w - 1.0)
    fy = np.clip(ys - 0.5, 0.0, h - 1.0)
    c0 = np.floor(fx).astype(np.int64)
    r0 = np.floor(fy).astype(np.int64)
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    ax = (fx - c0)[..., None]
    ay = (fy - r0)[..., None]
    top = img[r0, c0] * (1 - ax) + img[r0, c1] * ax
    bot = img[r1, c0] * (1 - ax) + img[r1, c1] * ax
    return top * (1 - ay) + bot * ay


def corrupt_image(img: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    """Apply one corruption; output has the same shape and dtype uint8."""
    data = _to_float(img)
    h, w, _ = data.shape
    if spec.kind == "box_blur":
        k = int(spec.level)
        out = ndimage.uniform_filter(data, size=(k, k, 1), mode="reflect")
    elif spec.kind == "gaussian_noise":
        rng = np.random.default_rng(spec.seed)
        out = data + rng.normal(0.0, spec.level, size=data.shape)
    elif spec.kind == "band_noise":
        out = data + band_noise_field(h, w, spec.level, spec.band, spec.seed)
    elif spec.kind == "shift":
        d = int(spec.level)
        rows = np.clip(np.arange(h) - d, 0, h - 1)
        cols = np.clip(np.arange(w) - d, 0, w - 1)
        out = data[rows][:, cols]
    else:  # rotate / scale via inverse-mapped bilinear resampling
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        ox, oy = inverse_point(spec, xs + 0.5, ys + 0.5, w, h)
        out = _sample_bilinear(data, ox, oy)
    return _to_uint8(out)


@dataclass
class CorrespondenceMap:
    """Per transformed patch: the original patch holding its back-projected
    center, or INVALID when that point leaves the image."""

    targets: np.ndarray  # (Hp, Wp, 2) int32, (row, col), INVALID = (-1, -1)
    upper_bound: float

    def valid(self) -> np.ndarray:
        return self.targets[:, :, 0] >= 0

    def is_identity(self) -> bool:
        hp, wp, _ = self.targets.shape
        rows, cols = np.mgrid[0:hp, 0:wp]
        return bool(np.all(self.targets[:, :, 0] == rows)
                    and np.all(self.targets[:, :, 1] == cols))


def identity_correspondence(grid: tuple[int, int]) -> CorrespondenceMap:
    hp, wp = grid
    rows, cols = np.mgrid[0:hp, 0:wp]
    targets = np.stack([rows, cols], axis=-1).astype(np.int32)
    return CorrespondenceMap(targets=targets, upper_bound=1.0)


def build_correspondence(spec: CorruptionSpec, grid: tuple[int, int],
                         patch_pixels: int) -> CorrespondenceMap:
    """Map each transformed patch to the original patch containing the
    inverse image of its center point; photometric kinds map identically."""
    if not spec.geometric:
        return identity_correspondence(grid)
    hp, wp = grid
    height, width = hp * patch_pixels, wp * patch_pixels
    rows, cols = np.mgrid[0:hp, 0:wp]
    cx = (cols + 0.5) * patch_pixels
    cy = (rows + 0.5) * patch_pixels
    ox, oy = inverse_point(spec, cx, cy, width, height)
    inside = (ox >= 0) & (ox < width) & (oy >= 0) & (oy < height)
    targets = np.full((hp, wp, 2), -1, dtype=np.int32)
    targets[inside, 0] = np.floor(oy[inside] / patch_pixels).astype(np.int32)
    targets[inside, 1] = np.floor(ox[inside] / patch_pixels).astype(np.int32)
    return CorrespondenceMap(targets=targets,
                             upper_bound=float(inside.mean()))


def read_png(path) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.uint8)


def write_png(img: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(path)


def write_sidecar(spec: CorruptionSpec, image_path) -> None:
    """Record the exact spec next to a corrupted image."""
    sidecar = Path(str(image_path) + ".json")
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_sidecar(image_path) -> CorruptionSpec:
    with open(str(image_path) + ".json", encoding="utf-8") as fh:
        return CorruptionSpec.from_dict(json.load(fh))
