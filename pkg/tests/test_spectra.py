import numpy as np
import pytest

from patchlens import kernels, spectra
from patchlens.embedset import SynthSpec, synth_shards
from patchlens.spectra import (
    FeatureMask,
    StatsAccumulator,
    apply_mask,
    apply_standardizer,
    feature_stats,
    fit_standardizer,
    mask_overlap,
    top_variance_mask,
)


def knn_accuracy(train_x, train_y, test_x, test_y):
    idx = kernels.nearest_index(train_x.astype(np.float32),
                                test_x.astype(np.float32))
    return float(np.mean(train_y[idx] == test_y))


@pytest.fixture(scope="module")
def mini_synth():
    """Small mirror of the high-variance phenomenon: 20 planted noise dims."""
    spec = SynthSpec(classes=10, signal_dims=56, noise_dims=20, noise_sigma=50.0,
                     class_separation=12.0, seed=202, images=25, grid=(10, 10))
    _, shards, label_grids = synth_shards(spec)
    x = np.concatenate([s.patches() for s in shards])
    y = np.concatenate([g.ravel() for g in label_grids])
    return spec, x[:2000], y[:2000], x[2000:], y[2000:]


class TestFeatureStats:
    def test_constant_vectors_zero_variance(self):
        v = np.tile([1.5, -2.0, 0.0], (6, 1))
        stats = feature_stats(v)
        assert np.allclose(stats.variance, 0.0)
        assert np.allclose(stats.mean, [1.5, -2.0, 0.0])

    def test_two_point_hand_value(self):
        stats = feature_stats(np.array([[0.0], [2.0]]))
        assert stats.mean[0] == pytest.approx(1.0)
        assert stats.variance[0] == pytest.approx(1.0)  # ((0-1)^2+(2-1)^2)/2

    def test_needs_two_vectors(self):
        with pytest.raises(ValueError):
            feature_stats(np.array([[1.0, 2.0]]))

    def test_order_invariant(self):
        rng = np.random.default_rng(0)
        v = rng.standard_normal((50, 7))
        a = feature_stats(v)
        b = feature_stats(v[::-1])
        assert np.allclose(a.mean, b.mean) and np.allclose(a.variance, b.variance)

    def test_accumulator_merge_matches_single_pass(self):
        rng = np.random.default_rng(1)
        v = rng.standard_normal((101, 5))
        whole = feature_stats(v)
        left = StatsAccumulator(5).update(v[:40])
        right = StatsAccumulator(5).update(v[40:])
        merged = left.merge(right).finalize()
        assert merged.sample_count == whole.sample_count
        assert np.allclose(merged.mean, whole.mean)
        assert np.allclose(merged.variance, whole.variance)

    def test_synth_noise_variance_near_sigma_squared(self):
        spec = SynthSpec(classes=10, signal_dims=56, noise_dims=200,
                         noise_sigma=50.0, class_separation=12.0, seed=7,
                         images=100, grid=(10, 10))
        _, shards, _ = synth_shards(spec)
        patches = np.concatenate([s.patches() for s in shards])
        assert patches.shape[0] == 10000
        stats = feature_stats(patches)
        noise_var = stats.variance[56:]
        assert np.all(np.abs(noise_var - 2500.0) <= 250.0)


class TestTopVarianceMask:
    def test_m_zero_keeps_all(self):
        stats = feature_stats(np.random.default_rng(0).standard_normal((10, 6)))
        mask = top_variance_mask(stats, 0)
        assert mask.retained == tuple(range(6))
        assert mask.removed_m == 0

    def test_paper_operating_point_sizes(self):
        rng = np.random.default_rng(1)
        stats = feature_stats(rng.standard_normal((20, 768)))
        mask = top_variance_mask(stats, 200)
        assert len(mask.retained) == 568
        assert mask.removed_m == 200

    def test_tie_removes_lower_index(self):
        stats = spectra.FeatureStats(dim=3, mean=np.zeros(3),
                                     variance=np.array([5.0, 5.0, 1.0]),
                                     sample_count=10)
        mask = top_variance_mask(stats, 1)
        assert mask.removed() == {0}

    def test_m_out_of_range(self):
        stats = feature_stats(np.random.default_rng(0).standard_normal((5, 4)))
        for bad in (-1, 4, 5):
            with pytest.raises(ValueError):
                top_variance_mask(stats, bad)

    def test_permutation_equivariant(self):
        rng = np.random.default_rng(3)
        v = rng.standard_normal((40, 9)) * rng.uniform(0.1, 10.0, 9)
        perm = rng.permutation(9)
        removed = top_variance_mask(feature_stats(v), 4).removed()
        removed_p = top_variance_mask(feature_stats(v[:, perm]), 4).removed()
        # feature j of the permuted data is feature perm[j] of the original
        assert {int(perm[j]) for j in removed_p} == removed


class TestApplyMask:
    def test_full_mask_identity(self):
        v = np.arange(12.0).reshape(3, 4)
        mask = FeatureMask(dim=4, retained=(0, 1, 2, 3))
        assert np.array_equal(apply_mask(v, mask), v)

    def test_coordinate_selection(self):
        mask = FeatureMask(dim=4, retained=(0, 2))
        out = apply_mask(np.array([9.0, 8.0, 7.0, 6.0]), mask)
        assert np.array_equal(out, [9.0, 7.0])

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            apply_mask(np.zeros((2, 5)), FeatureMask(dim=4, retained=(0,)))

    def test_distance_restriction(self):
        rng = np.random.default_rng(4)
        u, v = rng.standard_normal((2, 10))
        mask = FeatureMask(dim=10, retained=(1, 3, 4, 8))
        d_masked = np.sum((apply_mask(u, mask) - apply_mask(v, mask)) ** 2)
        d_direct = sum((u[i] - v[i]) ** 2 for i in mask.retained)
        assert d_masked == pytest.approx(d_direct, rel=1e-12)

    def test_masking_rescues_knn(self, mini_synth):
        spec, tx, ty, qx, qy = mini_synth
        full_acc = knn_accuracy(tx, ty, qx, qy)
        stats = feature_stats(tx)
        mask = top_variance_mask(stats, spec.noise_dims)
        masked_acc = knn_accuracy(apply_mask(tx, mask), ty, apply_mask(qx, mask), qy)
        assert full_acc <= 0.2
        assert masked_acc >= 0.9

    def test_masked_predictions_equal_signal_only(self, mini_synth):
        spec, tx, ty, qx, qy = mini_synth
        mask = top_variance_mask(feature_stats(tx), spec.noise_dims)
        assert set(mask.retained) == set(range(spec.signal_dims))
        idx_masked = kernels.nearest_index(
            apply_mask(tx, mask).astype(np.float32),
            apply_mask(qx, mask).astype(np.float32))
        idx_signal = kernels.nearest_index(
            tx[:, :spec.signal_dims].astype(np.float32),
            qx[:, :spec.signal_dims].astype(np.float32))
        assert np.array_equal(idx_masked, idx_signal)


class TestStandardizer:
    def test_train_set_becomes_unit(self):
        rng = np.random.default_rng(5)
        v = rng.standard_normal((500, 6)) * [1, 2, 5, 10, 0.5, 3] + [0, 1, -2, 3, 4, 5]
        s = fit_standardizer(v)
        z = apply_standardizer(v, s)
        assert np.allclose(z.mean(axis=0), 0.0, atol=1e-9)
        assert np.allclose(z.var(axis=0), 1.0, atol=1e-3)  # epsilon slack

    def test_constant_feature_maps_to_zero(self):
        v = np.column_stack([np.full(10, 3.0), np.arange(10.0)])
        z = apply_standardizer(v, fit_standardizer(v))
        assert np.allclose(z[:, 0], 0.0)

    def test_standardization_rescues_knn(self, mini_synth):
        _, tx, ty, qx, qy = mini_synth
        s = fit_standardizer(tx)
        acc = knn_accuracy(apply_standardizer(tx, s), ty,
                           apply_standardizer(qx, s), qy)
        assert acc >= 0.85


class TestMaskOverlap:
    def test_self_overlap(self):
        mask = FeatureMask(dim=6, retained=(0, 1, 2))
        assert mask_overlap(mask, mask) == 3

    def test_disjoint(self):
        a = FeatureMask(dim=4, retained=(2, 3))  # removed {0,1}
        b = FeatureMask(dim=4, retained=(0, 1))  # removed {2,3}
        assert mask_overlap(a, b) == 0

    def test_mismatch_raises(self):
        a = FeatureMask(dim=4, retained=(0, 1))
        b = FeatureMask(dim=5, retained=(0, 1, 2))
        with pytest.raises(ValueError):
            mask_overlap(a, b)

    def test_shared_planted_dims_across_synth_datasets(self):
        masks = []
        for seed in (11, 99):
            spec = SynthSpec(classes=5, signal_dims=40, noise_dims=10,
                             noise_sigma=50.0, class_separation=8.0, seed=seed,
                             images=10, grid=(8, 8))
            _, shards, _ = synth_shards(spec)
            patches = np.concatenate([s.patches() for s in shards])
            masks.append(top_variance_mask(feature_stats(patches), 10))
        assert mask_overlap(masks[0], masks[1]) == 10


class TestSerialization:
    def test_stats_roundtrip(self, tmp_path):
        stats = feature_stats(np.random.default_rng(8).standard_normal((20, 5)))
        spectra.save_stats(stats, tmp_path / "s.json", provenance="ds/model/12")
        back = spectra.load_stats(tmp_path / "s.json")
        assert back.dim == 5 and back.sample_count == 20
        assert np.allclose(back.variance, stats.variance)

    def test_mask_roundtrip(self, tmp_path):
        mask = FeatureMask(dim=8, retained=(0, 2, 5), provenance="cityscapes/mae")
        spectra.save_mask(mask, tmp_path / "m.json")
        assert spectra.load_mask(tmp_path / "m.json") == mask
