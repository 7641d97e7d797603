import numpy as np
import pytest

from vitshard.shardio import ShardRecord, ShardWriter, encode_shard, read_back

# Documented layout for a 1x1 grid, D=2, id "img0", grid (1.0, 2.0)
GOLDEN_1X1X2_HEX = (
    "504c4e530100000001000000010000000200000004000000696d6730"
    "0000803f00000040"
)


def test_golden_bytes():
    rec = ShardRecord(image_id="img0",
                      grid=np.array([[[1.0, 2.0]]], dtype=np.float32))
    assert encode_shard(rec).hex() == GOLDEN_1X1X2_HEX


def test_writer_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    writer = ShardWriter(tmp_path / "ds", model_id="mae", layer=12,
                         feature_dim=5, grid=(2, 3), patch_pixels=16,
                         normalized=True, dataset_id="toy")
    records = []
    for i in range(3):
        rec = ShardRecord(image_id=f"im{i}",
                          grid=rng.standard_normal((2, 3, 5)).astype(np.float32),
                          image_vector=rng.standard_normal(5).astype(np.float32),
                          source_tile=(256, 0, "parent") if i == 1 else None)
        writer.add(rec)
        records.append(rec)
    writer.close()
    manifest, back = read_back(tmp_path / "ds")
    assert manifest["image_count"] == 3
    assert manifest["grid"] == [2, 3] and manifest["feature_dim"] == 5
    assert manifest["shards"][1]["source_tile"] == {"x": 256, "y": 0,
                                                    "parent": "parent"}
    for a, b in zip(records, back):
        assert a.image_id == b.image_id
        assert a.grid.tobytes() == b.grid.tobytes()
        assert a.image_vector.tobytes() == b.image_vector.tobytes()


def test_shape_mismatch_rejected(tmp_path):
    writer = ShardWriter(tmp_path / "ds", model_id="m", layer=1, feature_dim=4,
                         grid=(2, 2), patch_pixels=16, normalized=True,
                         dataset_id="d")
    with pytest.raises(ValueError, match="does not match"):
        writer.add(ShardRecord(image_id="im0",
                               grid=np.zeros((2, 2, 5), dtype=np.float32)))


def test_non_finite_rejected():
    rec = ShardRecord(image_id="im0",
                      grid=np.array([[[np.inf, 0.0]]], dtype=np.float32))
    with pytest.raises(ValueError, match="non-finite"):
        encode_shard(rec)
