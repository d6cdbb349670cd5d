import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from avae.datasets import (
    Dataset,
    IdxElementTypeError,
    IdxMagicError,
    IdxTruncatedError,
    gaussian_mixture,
    load_idx,
    make_dataset,
    mixture_means,
    read_idx_raw,
    ring,
    write_idx,
)


class TestMixture:
    def test_single_component_mean(self):
        ds = gaussian_mixture(4000, 1, 3, 1.0, seed=0)
        assert np.all(np.abs(ds.data.mean(axis=0)) < 3 / np.sqrt(4000))

    def test_tight_clusters_classify(self):
        ds = gaussian_mixture(1000, 2, 2, 0.05, seed=1)
        means = mixture_means(2, 2)
        label = np.argmin(((ds.data[:, None] - means[None]) ** 2).sum(-1), axis=1)
        assert np.mean(label == ds.labels) >= 0.99

    def test_balanced(self):
        ds = gaussian_mixture(99, 3, 4, 0.1, seed=0)
        assert_array_equal(np.bincount(ds.labels), [33, 33, 33])

    @pytest.mark.parametrize("args", [(2, 3, 2, 1.0), (10, 2, 2, 0.0), (10, 7, 3, 1.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            gaussian_mixture(*args, seed=0)

    def test_seeds(self):
        a = gaussian_mixture(50, 2, 2, 0.3, seed=0).data
        assert_array_equal(a, gaussian_mixture(50, 2, 2, 0.3, seed=0).data)
        assert a.tobytes() != gaussian_mixture(50, 2, 2, 0.3, seed=1).data.tobytes()

    def test_means_layout(self):
        assert_allclose(mixture_means(4, 2), [[1, 0], [0, 1], [-1, 0], [0, -1]], atol=1e-15)
        assert_allclose(mixture_means(3, 1).ravel(), [-1, 0, 1])


class TestRing:
    def test_noise_free_radius(self):
        ds = ring(500, 4, 2.5, 0.0, seed=0)
        assert_allclose(np.hypot(ds.data[:, 0], ds.data[:, 1]), 2.5, rtol=0, atol=1e-12)
        assert np.all(ds.data[:, 2:] == 0)

    def test_mean_near_origin(self):
        ds = ring(20000, 2, 1.0, 0.1, seed=3)
        sd = ds.data.std(axis=0)
        assert np.all(np.abs(ds.data.mean(axis=0)) < 3 * sd / np.sqrt(20000))

    def test_d1_rejected(self):
        with pytest.raises(ValueError):
            ring(10, 1, 1.0, 0.1, seed=0)


class TestIdx:
    def test_hand_built_file(self, tmp_path):
        p = tmp_path / "tiny.idx"
        payload = bytes([0, 255, 255, 0, 0, 0, 255, 255])
        p.write_bytes(bytes([0, 0, 8, 3]) + (2).to_bytes(4, "big") + (2).to_bytes(4, "big")
                      + (2).to_bytes(4, "big") + payload)
        ds = load_idx(p)
        assert ds.data.shape == (2, 4)
        assert_array_equal(ds.data, [[0, 1, 1, 0], [0, 0, 1, 1]])

    def test_truncated(self, tmp_path):
        p = tmp_path / "t.idx"
        p.write_bytes(bytes([0, 0, 8, 1]) + (10).to_bytes(4, "big") + bytes(4))
        with pytest.raises(IdxTruncatedError) as err:
            load_idx(p)
        assert (err.value.expected, err.value.actual) == (18, 12)
        assert "18" in str(err.value) and "12" in str(err.value)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "m.idx"
        p.write_bytes(bytes([1, 0, 8, 1, 0, 0, 0, 0]))
        with pytest.raises(IdxMagicError):
            load_idx(p)

    def test_unsupported_type(self, tmp_path):
        p = tmp_path / "f.idx"
        p.write_bytes(bytes([0, 0, 0x0D, 1]) + (1).to_bytes(4, "big") + bytes(4))
        with pytest.raises(IdxElementTypeError):
            load_idx(p)

    def test_round_trip(self, tmp_path, rng):
        a = rng.integers(0, 256, size=(3, 5, 4), dtype=np.uint8)
        write_idx(tmp_path / "r.idx", a)
        assert_array_equal(read_idx_raw(tmp_path / "r.idx"), a)
        ds = load_idx(tmp_path / "r.idx")
        assert ds.data.min() >= 0 and ds.data.max() <= 1

    def test_write_rejects_non_bytes(self, tmp_path):
        with pytest.raises(IdxElementTypeError):
            write_idx(tmp_path / "x.idx", np.zeros(3))


class TestMakeDataset:
    def test_mixture(self):
        ds = make_dataset({"kind": "mixture", "n": 10, "k": 2, "d": 2, "spread": 0.1, "seed": 0})
        assert ds.data.shape == (10, 2)

    def test_idx_limit(self, tmp_path, rng):
        write_idx(tmp_path / "a.idx", rng.integers(0, 256, size=(6, 2, 2), dtype=np.uint8))
        ds = make_dataset({"kind": "idx", "path": str(tmp_path / "a.idx"), "limit": 4})
        assert ds.data.shape == (4, 4)

    @pytest.mark.parametrize("spec", [
        {"kind": "nope"},
        {"kind": "ring", "n": 10, "d": 2, "radius": 1.0, "seed": 0},
        {"kind": "ring", "n": 10, "d": 2, "radius": 1.0, "noise": 0.1, "seed": 0, "extra": 1},
    ])
    def test_strict(self, spec):
        with pytest.raises(ValueError):
            make_dataset(spec)

    def test_dataset_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Dataset(np.array([[np.nan]]), name="x")
