import math

import numpy as np
import pytest

from patchlens import corrupt
from patchlens.corrupt import (
    CorruptionSpec,
    band_noise_field,
    build_correspondence,
    corrupt_image,
)


def checker(h=64, w=64):
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[::2, ::2] = 200
    img[1::2, 1::2] = 90
    img[:, :, 1] = 128
    return img


class TestSpecValidation:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            CorruptionSpec(kind="fog", level=1)

    def test_band_required(self):
        with pytest.raises(ValueError):
            CorruptionSpec(kind="band_noise", level=40)

    def test_band_only_for_band_noise(self):
        with pytest.raises(ValueError):
            CorruptionSpec(kind="rotate", level=5, band=1)

    def test_sidecar_roundtrip(self, tmp_path):
        spec = CorruptionSpec(kind="band_noise", level=40, band=2, seed=9)
        path = tmp_path / "img.png"
        corrupt.write_png(checker(), path)
        corrupt.write_sidecar(spec, path)
        assert corrupt.read_sidecar(path) == spec


class TestPhotometric:
    def test_blur_constant_image(self):
        img = np.full((32, 32, 3), 77, dtype=np.uint8)
        out = corrupt_image(img, CorruptionSpec(kind="box_blur", level=10))
        assert np.array_equal(out, img)

    def test_blur_reduces_contrast(self):
        img = checker()
        out = corrupt_image(img, CorruptionSpec(kind="box_blur", level=10))
        assert out.astype(np.int32).std() < img.astype(np.int32).std()

    def test_zero_sigma_noise_is_identity(self):
        img = checker()
        out = corrupt_image(img, CorruptionSpec(kind="gaussian_noise", level=0, seed=1))
        assert np.array_equal(out, img)

    def test_gaussian_noise_deterministic(self):
        img = checker()
        spec = CorruptionSpec(kind="gaussian_noise", level=20, seed=5)
        assert np.array_equal(corrupt_image(img, spec), corrupt_image(img, spec))
        other = CorruptionSpec(kind="gaussian_noise", level=20, seed=6)
        assert not np.array_equal(corrupt_image(img, spec), corrupt_image(img, other))


class TestBandNoise:
    @pytest.mark.parametrize("band", [0, 1, 2, 3])
    def test_spectral_confinement(self, band):
        # Independent check: FFT the generated field and integrate energy
        # against a mask rebuilt here from the band definition.
        field = band_noise_field(224, 224, sigma=40.0, band=band, seed=3)
        cy, cx = 112, 112
        yy, xx = np.mgrid[0:224, 0:224]
        radius = np.hypot(yy - cy, xx - cx)
        r_max = math.hypot(224, 224) / 2.0
        lo, hi = band * r_max / 4, (band + 1) * r_max / 4
        inside = (radius >= lo) & (radius < hi) if band < 3 else (radius >= lo)
        for c in range(3):
            spec = np.fft.fftshift(np.fft.fft2(field[:, :, c]))
            energy = np.abs(spec) ** 2
            total = energy.sum()
            assert total > 0
            assert energy[inside].sum() / total >= 0.999999

    def test_bands_partition_full_noise(self):
        # Same seed in every call regenerates the same white noise, so the
        # four band fields must sum back to it (all bins covered exactly once).
        h = w = 96
        rng = np.random.default_rng(17)
        full = rng.normal(0.0, 40.0, size=(h, w, 3))
        summed = sum(band_noise_field(h, w, 40.0, b, seed=17) for b in range(4))
        err = np.sum((summed - full) ** 2) / np.sum(full ** 2)
        assert err < 1e-6

    def test_added_to_black_image(self):
        img = np.zeros((64, 64, 3), dtype=np.uint8)
        out = corrupt_image(img, CorruptionSpec(kind="band_noise", level=40,
                                                band=1, seed=0))
        assert out.shape == img.shape
        assert out.max() > 0  # noise survived the clamp somewhere


class TestGeometric:
    def test_shift_moves_content(self):
        img = np.zeros((16, 16, 3), dtype=np.uint8)
        img[4, 4] = 255
        out = corrupt_image(img, CorruptionSpec(kind="shift", level=3))
        assert np.all(out[7, 7] == 255)
        assert np.all(out[4, 4] == 0)

    def test_shift_replicates_border(self):
        img = checker(16, 16)
        out = corrupt_image(img, CorruptionSpec(kind="shift", level=2))
        assert np.array_equal(out[0], out[1])  # vacated top rows copy the edge
        assert np.array_equal(out[:, 0], out[:, 1])

    def test_rotate_zero_is_identity(self):
        img = checker()
        out = corrupt_image(img, CorruptionSpec(kind="rotate", level=0))
        assert np.array_equal(out, img)

    def test_scale_one_is_identity(self):
        img = checker()
        out = corrupt_image(img, CorruptionSpec(kind="scale", level=1.0))
        assert np.array_equal(out, img)

    def test_rotation_direction_ccw(self):
        # A bright blob right of center must move toward the top (y-down ccw).
        img = np.zeros((64, 64, 3), dtype=np.uint8)
        img[30:34, 50:54] = 255
        out = corrupt_image(img, CorruptionSpec(kind="rotate", level=20))
        ys, xs, _ = np.nonzero(out > 128)
        assert ys.mean() < 30

    @pytest.mark.parametrize("kind,level", [("box_blur", 20), ("gaussian_noise", 30),
                                            ("band_noise", 40), ("shift", 4),
                                            ("rotate", 15), ("scale", 0.8)])
    def test_dimensions_preserved(self, kind, level):
        img = checker(48, 80)
        band = 2 if kind == "band_noise" else None
        out = corrupt_image(img, CorruptionSpec(kind=kind, level=level, band=band))
        assert out.shape == img.shape and out.dtype == np.uint8


def brute_force_rotation_map(theta_deg, hp, wp, pp):
    """Scalar enumeration of all patch centers through the inverse rotation."""
    t = math.radians(theta_deg)
    width, height = wp * pp, hp * pp
    cx, cy = width / 2.0, height / 2.0
    targets = np.full((hp, wp, 2), -1, dtype=np.int32)
    valid = 0
    for r in range(hp):
        for c in range(wp):
            x, y = (c + 0.5) * pp, (r + 0.5) * pp
            dx, dy = x - cx, y - cy
            ox = cx + dx * math.cos(t) - dy * math.sin(t)
            oy = cy + dx * math.sin(t) + dy * math.cos(t)
            if 0.0 <= ox < width and 0.0 <= oy < height:
                targets[r, c] = (int(oy // pp), int(ox // pp))
                valid += 1
    return targets, valid / (hp * wp)


class TestCorrespondence:
    def test_photometric_is_identity(self):
        corr = build_correspondence(CorruptionSpec(kind="gaussian_noise", level=10),
                                    (4, 5), 16)
        assert corr.is_identity()
        assert corr.upper_bound == 1.0

    def test_rotate_zero_identity(self):
        corr = build_correspondence(CorruptionSpec(kind="rotate", level=0), (4, 4), 16)
        assert corr.is_identity()

    @pytest.mark.parametrize("theta", [5, 10, 15, 20])
    def test_rotation_matches_brute_force(self, theta):
        corr = build_correspondence(CorruptionSpec(kind="rotate", level=theta),
                                    (14, 14), 16)
        targets, ub = brute_force_rotation_map(theta, 14, 14, 16)
        assert np.array_equal(corr.targets, targets)
        assert corr.upper_bound == pytest.approx(ub, abs=0)

    @pytest.mark.parametrize("d", [1, 2, 3, 4])
    def test_shift_identity_on_interior(self, d):
        corr = build_correspondence(CorruptionSpec(kind="shift", level=d), (14, 14), 16)
        rows, cols = np.mgrid[0:14, 0:14]
        interior = (rows > 0) & (rows < 13) & (cols > 0) & (cols < 13)
        assert np.all(corr.targets[interior][:, 0] == rows[interior])
        assert np.all(corr.targets[interior][:, 1] == cols[interior])
        # with d <= half a patch the map is identity everywhere
        assert corr.is_identity()
        assert corr.upper_bound == 1.0

    def test_scale_down_invalidates_border(self):
        corr = build_correspondence(CorruptionSpec(kind="scale", level=0.8),
                                    (14, 14), 16)
        assert corr.upper_bound < 1.0
        assert not corr.valid()[0, 0]
        assert corr.valid()[7, 7]

    def test_scale_up_all_valid(self):
        corr = build_correspondence(CorruptionSpec(kind="scale", level=1.2),
                                    (14, 14), 16)
        assert corr.upper_bound == 1.0

    def test_rotation_invalidates_corners_only(self):
        corr = build_correspondence(CorruptionSpec(kind="rotate", level=20),
                                    (14, 14), 16)
        valid = corr.valid()
        assert not valid[0, 0] and not valid[13, 13]
        assert valid[7, 7]
        assert 0.0 < corr.upper_bound < 1.0


class TestPngIo:
    def test_roundtrip(self, tmp_path):
        img = checker(20, 28)
        corrupt.write_png(img, tmp_path / "x.png")
        assert np.array_equal(corrupt.read_png(tmp_path / "x.png"), img)
