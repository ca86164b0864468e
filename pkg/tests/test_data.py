import logging

import numpy as np
import pytest
import torch
from PIL import Image

from hallucsr.data import load_dataset, split, stripes, synth_dataset
from hallucsr.imagecore import compute_gradient, downscale


def _write_images(root, n, size=(40, 30)):
    rng = np.random.default_rng(0)
    for i in range(n):
        Image.fromarray(rng.integers(0, 256, (*size, 3), dtype=np.uint8)).save(root / f"img_{i:02d}.png")


class TestLoadDataset:
    def test_pairs(self, tmp_path):
        _write_images(tmp_path, 10)
        ds = load_dataset(tmp_path, 32, 8)
        assert len(ds) == 10
        for s in ds:
            assert s.hr.shape == (3, 32, 32) and s.lr.shape == (3, 4, 4)
            assert torch.equal(s.lr, downscale(s.hr, 8))
            assert s.hr.min() >= -1 and s.hr.max() <= 1

    def test_stable_order(self, tmp_path):
        _write_images(tmp_path, 5)
        a = load_dataset(tmp_path, 16, 4)
        b = load_dataset(tmp_path, 16, 4)
        assert [s.id for s in a] == [s.id for s in b] == sorted(s.id for s in a)
        assert all(torch.equal(x.hr, y.hr) for x, y in zip(a, b))

    def test_center_crop(self, tmp_path):
        img = np.zeros((8, 16, 3), np.uint8)
        img[:, 4:12] = 255  # the centered square is all white
        Image.fromarray(img).save(tmp_path / "wide.png")
        (s,) = load_dataset(tmp_path, 8, 2)
        assert torch.equal(s.hr, torch.ones_like(s.hr))

    def test_skips_unreadable(self, tmp_path, caplog):
        _write_images(tmp_path, 2)
        (tmp_path / "broken.png").write_bytes(b"nope")
        with caplog.at_level(logging.WARNING):
            ds = load_dataset(tmp_path, 16, 4)
        assert len(ds) == 2
        assert "broken.png" in caplog.text

    def test_empty(self, tmp_path):
        with pytest.raises(ValueError, match="no decodable"):
            load_dataset(tmp_path, 16, 4)

    def test_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nowhere"):
            load_dataset(tmp_path / "nowhere", 16, 4)


class TestSynth:
    def test_count_and_shape(self):
        ds = synth_dataset(8, 32, 8, seed=1)
        assert len(ds) == 8
        assert ds[0].lr.shape == (3, 4, 4)
        assert all(torch.equal(s.lr, downscale(s.hr, 8)) for s in ds)

    def test_seeded(self):
        a = synth_dataset(4, 16, 4, seed=5)
        b = synth_dataset(4, 16, 4, seed=5)
        assert all(torch.equal(x.hr, y.hr) for x, y in zip(a, b))
        c = synth_dataset(4, 16, 4, seed=6)
        assert not all(torch.equal(x.hr, y.hr) for x, y in zip(a, c))

    def test_nontrivial_gradients(self):
        peaks = [compute_gradient(s.hr).max().item() for s in synth_dataset(8, 32, 8, seed=0)]
        assert min(peaks) > 0  # no flat images
        assert max(peaks) > 0.5  # some hard edges (disks / stripes)

    def test_on_8bit_grid(self):
        hr = synth_dataset(2, 16, 4, seed=0)[0].hr.double()
        levels = (hr + 1) * 127.5
        assert torch.allclose(levels, levels.round(), atol=1e-4)

    @pytest.mark.parametrize("period", [4, 6])
    def test_stripes_gradient_periodic(self, period):
        img = torch.as_tensor(stripes(24, period).transpose(2, 0, 1).copy())
        g = compute_gradient(img)[0]
        interior = g[:, 1:-1]
        assert torch.equal(interior[:, :-period], interior[:, period:])
        assert torch.equal(g[0], g[5])  # constant along the stripe direction

    def test_invalid(self):
        with pytest.raises(ValueError):
            synth_dataset(0, 16, 4)
        with pytest.raises(ValueError):
            synth_dataset(2, 18, 4)


class TestSplit:
    def test_half(self):
        items = list(range(10))
        train, test = split(items, 0.5, seed=0)
        assert len(train) == len(test) == 5
        assert not set(train) & set(test)
        assert sorted(train + test) == items

    def test_seeded(self):
        items = list(range(20))
        assert split(items, 0.3, seed=4) == split(items, 0.3, seed=4)
        assert split(items, 0.3, seed=4) != split(items, 0.3, seed=5)

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.2, 1.5])
    def test_bad_fraction(self, frac):
        with pytest.raises(ValueError):
            split([1, 2, 3], frac)
