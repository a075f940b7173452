"""Synthetic generator, sample sets, IDX codec and MNIST binarisation."""

import gzip
import struct

import numpy as np
import pytest
from scipy.special import expit

from src.data import (
    IDX_IMAGES_MAGIC,
    SampleSet,
    SyntheticConfig,
    draw_labels,
    gen_synthetic,
    load_mnist_binary,
    load_samples,
    read_idx,
    save_samples,
    split,
    write_idx,
)
from src.errors import ConfigurationError, DataFormatError, InputError


class TestSampleSet:
    def test_rejects_inputs_outside_unit_ball(self):
        with pytest.raises(InputError):
            SampleSet(np.array([[1.0, 1.0]]), np.array([1.0]))

    def test_rejects_non_binary_labels(self):
        with pytest.raises(InputError):
            SampleSet(np.zeros((2, 2)), np.array([1.0, 0.0]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(InputError):
            SampleSet(np.zeros((3, 2)), np.ones(2))

    def test_is_read_only(self):
        data = SampleSet(np.zeros((2, 2)), np.ones(2))
        with pytest.raises(ValueError):
            data.x[0, 0] = 0.5

    def test_replace_sample_leaves_original(self):
        data = SampleSet(np.zeros((3, 2)), np.ones(3))
        other = data.replace_sample(1, np.array([0.5, 0.5]), -1.0)
        assert other.y[1] == -1.0
        np.testing.assert_array_equal(other.x[1], [0.5, 0.5])
        assert data.y[1] == 1.0
        assert other.meta["replaced_index"] == 1


class TestSynthetic:
    def test_shape_norms_and_labels(self):
        data = gen_synthetic(SyntheticConfig(n=500, d=10, seed=3))
        assert (data.n, data.d) == (500, 10)
        assert np.linalg.norm(data.x, axis=1).max() <= 1.0
        assert set(np.unique(data.y)) == {-1.0, 1.0}
        assert data.meta["source"] == "synthetic"

    def test_inputs_are_scaled_uniforms(self):
        data = gen_synthetic(SyntheticConfig(n=2000, d=4, seed=1))
        assert np.abs(data.x).max() <= 0.5
        assert data.x.mean() == pytest.approx(0.0, abs=0.02)

    def test_seeded(self):
        cfg = SyntheticConfig(n=50, d=3, seed=9)
        first, second = gen_synthetic(cfg), gen_synthetic(cfg)
        np.testing.assert_array_equal(first.x, second.x)
        np.testing.assert_array_equal(first.y, second.y)
        assert not np.array_equal(first.x, gen_synthetic(SyntheticConfig(n=50, d=3)).x)

    def test_label_frequencies_follow_the_sigmoid(self):
        scores = np.array([-0.4, 0.0, 0.25])
        draws = 5000
        rng = np.random.default_rng(42)
        y = draw_labels(np.repeat(scores, draws), 4.0, 0.0, rng).reshape(len(scores), draws)
        prob = expit(4.0 * scores)
        freq = (y > 0).mean(axis=1)
        sigma = np.sqrt(prob * (1.0 - prob) / draws)
        pooled = (freq - prob).sum() / np.sqrt((sigma**2).sum())
        assert abs(pooled) <= 3.0
        assert (np.abs(freq - prob) <= 4.0 * sigma).all()

    def test_vanishing_signal_balances_labels(self):
        data = gen_synthetic(SyntheticConfig(n=2000, d=10, s=1e-9, sigma_xi2=0.0, seed=5))
        assert abs((data.y > 0).mean() - 0.5) <= 5.0 / np.sqrt(data.n)

    def test_invalid_config(self):
        with pytest.raises(ConfigurationError):
            SyntheticConfig(n=0)
        with pytest.raises(ConfigurationError):
            SyntheticConfig(s=0.0)

    def test_split_sizes(self):
        data = gen_synthetic(SyntheticConfig(n=10, d=2))
        first, second = split(data, 0.25, seed=0)
        assert (first.n, second.n) == (3, 7)
        combined = np.sort(np.concatenate([first.x[:, 0], second.x[:, 0]]))
        np.testing.assert_array_equal(combined, np.sort(data.x[:, 0]))

    @pytest.mark.parametrize(("n", "fraction", "expected"), [(50, 0.14, 7), (25, 0.28, 7)])
    def test_split_size_is_exact_on_whole_products(self, n, fraction, expected):
        data = gen_synthetic(SyntheticConfig(n=n, d=2))
        first, second = split(data, fraction, seed=0)
        assert (first.n, second.n) == (expected, n - expected)

    def test_split_rejects_empty_side(self):
        data = gen_synthetic(SyntheticConfig(n=3, d=2))
        with pytest.raises(InputError):
            split(data, 0.999, seed=0)

    def test_csv_export(self, tmp_path):
        data = gen_synthetic(SyntheticConfig(n=20, d=3, seed=2))
        path = save_samples(tmp_path / "synth.csv", data)
        assert path.with_suffix(".json").exists()
        back = load_samples(path)
        np.testing.assert_array_equal(back.x, data.x)
        np.testing.assert_array_equal(back.y, data.y)
        assert back.meta["seed"] == 2


class TestIdx:
    @pytest.mark.parametrize("name", ["array.idx", "array.idx.gz"])
    def test_write_then_read(self, tmp_path, name):
        array = np.random.default_rng(42).integers(0, 256, size=(4, 3, 2), dtype=np.uint8)
        back = read_idx(write_idx(tmp_path / name, array))
        np.testing.assert_array_equal(back, array)

    def test_header_is_big_endian(self, tmp_path):
        path = write_idx(tmp_path / "images.idx", np.zeros((2, 28, 28), dtype=np.uint8))
        magic, count, rows, cols = struct.unpack(">4I", path.read_bytes()[:16])
        assert (magic, count, rows, cols) == (IDX_IMAGES_MAGIC, 2, 28, 28)

    def test_wrong_magic(self, tmp_path):
        path = write_idx(tmp_path / "labels.idx", np.zeros(5, dtype=np.uint8))
        with pytest.raises(DataFormatError):
            read_idx(path, IDX_IMAGES_MAGIC)

    def test_truncated_payload(self, tmp_path):
        path = write_idx(tmp_path / "images.idx", np.ones((3, 4, 4), dtype=np.uint8))
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(DataFormatError):
            read_idx(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "empty.idx"
        path.write_bytes(b"\x00\x00")
        with pytest.raises(DataFormatError):
            read_idx(path)


class TestMnistBinary:
    @pytest.fixture
    def idx_pair(self, tmp_path):
        rng = np.random.default_rng(42)
        images = rng.integers(0, 256, size=(6, 4, 4), dtype=np.uint8)
        labels = np.array([0, 1, 7, 1, 0, 3], dtype=np.uint8)
        image_path = write_idx(tmp_path / "images-idx3-ubyte", images)
        label_path = tmp_path / "labels-idx1-ubyte.gz"
        write_idx(label_path, labels)
        return image_path, label_path, images, labels

    def test_keeps_two_classes(self, idx_pair):
        image_path, label_path, images, _ = idx_pair
        data = load_mnist_binary(image_path, label_path)
        assert data.n == 4
        assert data.d == 16
        np.testing.assert_array_equal(data.y, [1.0, -1.0, -1.0, 1.0])
        assert np.linalg.norm(data.x, axis=1).max() <= 1.0 + 1e-12
        # scaling keeps the direction of the raw pixels
        raw = images[0].reshape(-1).astype(float)
        np.testing.assert_allclose(data.x[0] / np.linalg.norm(data.x[0]), raw / np.linalg.norm(raw))
        assert len(data.meta["images_sha256"]) == 64

    def test_count_mismatch(self, idx_pair, tmp_path):
        image_path, _, _, _ = idx_pair
        short = write_idx(tmp_path / "short-labels", np.zeros(5, dtype=np.uint8))
        with pytest.raises(DataFormatError):
            load_mnist_binary(image_path, short)

    def test_labels_file_is_gzip(self, idx_pair):
        _, label_path, _, labels = idx_pair
        with gzip.open(label_path, "rb") as fh:
            assert fh.read()[8:] == labels.tobytes()
