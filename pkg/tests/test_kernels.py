import numpy as np
import pytest

from patchlens import kernels


def has_compiled():
    try:
        return kernels._nn is not None
    except AttributeError:
        return False


needs_compiled = pytest.mark.skipif(not has_compiled(),
                                    reason="compiled kernel not built")


class TestDispatch:
    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            kernels.nearest_index(np.zeros((3, 4), dtype=np.float32),
                                  np.zeros((2, 5), dtype=np.float32))

    def test_empty_db(self):
        with pytest.raises(ValueError, match="empty"):
            kernels.nearest_index(np.zeros((0, 4), dtype=np.float32),
                                  np.zeros((2, 4), dtype=np.float32))

    def test_groups_must_pair(self):
        db = np.zeros((3, 2), dtype=np.float32)
        q = np.zeros((1, 2), dtype=np.float32)
        with pytest.raises(ValueError):
            kernels.nearest_index(db, q, db_groups=np.zeros(3, dtype=np.int64))

    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("PATCHLENS_BACKEND", "numpy")
        assert kernels.backend_name() == "numpy"


class TestAgreement:
    @needs_compiled
    def test_backends_agree_on_random_problems(self):
        rng = np.random.default_rng(50)
        for _ in range(40):
            n = int(rng.integers(1, 300))
            d = int(rng.integers(1, 96))
            q = int(rng.integers(1, 50))
            db = rng.standard_normal((n, d)).astype(np.float32)
            queries = rng.standard_normal((q, d)).astype(np.float32)
            a = kernels.nearest_index(db, queries, backend="compiled")
            b = kernels.nearest_index(db, queries, backend="numpy")
            assert np.array_equal(a, b)

    @needs_compiled
    def test_backends_agree_on_exact_ties(self):
        # duplicated rows: both backends must return the lowest index
        db = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]], dtype=np.float32)
        q = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=np.float32)
        for backend in ("compiled", "numpy"):
            got = kernels.nearest_index(db, q, backend=backend)
            assert np.array_equal(got, [0, 0])

    @needs_compiled
    def test_threads_identical(self):
        rng = np.random.default_rng(51)
        db = rng.standard_normal((500, 40)).astype(np.float32)
        q = rng.standard_normal((200, 40)).astype(np.float32)
        a = kernels.nearest_index(db, q, threads=1, backend="compiled")
        b = kernels.nearest_index(db, q, threads=8, backend="compiled")
        assert np.array_equal(a, b)


class TestExclusion:
    @pytest.mark.parametrize("backend", ["compiled", "numpy"])
    def test_same_group_skipped(self, backend):
        if backend == "compiled" and not has_compiled():
            pytest.skip("compiled kernel not built")
        db = np.array([[0.0], [1.0], [2.0]], dtype=np.float32)
        q = np.array([[0.1]], dtype=np.float32)
        got = kernels.nearest_index(db, q,
                                    db_groups=np.array([7, 8, 9]),
                                    q_groups=np.array([7]),
                                    backend=backend)
        assert got[0] == 1  # entry 0 excluded despite being nearest

    @pytest.mark.parametrize("backend", ["compiled", "numpy"])
    def test_all_excluded_raises(self, backend):
        if backend == "compiled" and not has_compiled():
            pytest.skip("compiled kernel not built")
        db = np.array([[0.0], [1.0]], dtype=np.float32)
        q = np.array([[0.1]], dtype=np.float32)
        with pytest.raises(ValueError, match="exclusion"):
            kernels.nearest_index(db, q,
                                  db_groups=np.array([3, 3]),
                                  q_groups=np.array([3]),
                                  backend=backend)
