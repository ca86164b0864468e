import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hallucsr.data import make_pair
from hallucsr.evaluation import (
    PSNR_CAP,
    MetricsReport,
    consistency_violation_rate,
    diversity_score,
    emit_grid,
    evaluate,
    gaussian_window,
    perceptual_distance,
    psnr,
    sample_noise,
    ssim,
)
from hallucsr.imagecore import nearest_upscale, read_png
from hallucsr.nets import MultiScaleOutput, build_feature_extractor

from oracles import gaussian_window_oracle, ssim_oracle


def rand_img(seed, shape=(3, 16, 16)):
    return torch.from_numpy(np.random.default_rng(seed).uniform(-1, 1, shape))


class ConstantModel:
    """Outputs a fixed image (and a gradient map offset by ``z[0]``) regardless of lr."""

    def __init__(self, image, grad_offset=True):
        self.image = image
        self.grad_offset = grad_offset

    def __call__(self, lr, z):
        b = lr.shape[0]
        img = self.image.expand(b, *self.image.shape[-3:])
        g = torch.zeros(b, 1, *img.shape[-2:], dtype=img.dtype)
        if self.grad_offset:
            g = g + z[:, :1, None, None].to(img.dtype)
        return MultiScaleOutput([img], [g])


class CopyModel:
    def __init__(self, factor):
        self.factor = factor

    def __call__(self, lr, z):
        img = nearest_upscale(lr, self.factor)
        return MultiScaleOutput([img], [torch.zeros_like(img[:, :1])])


# psnr

def test_psnr_identical_is_cap():
    a = rand_img(0)
    assert psnr(a, a) == PSNR_CAP == 99.0


def test_psnr_closed_forms():
    assert psnr(-torch.ones(3, 8, 8), torch.ones(3, 8, 8)) == pytest.approx(0.0, abs=1e-6)
    a = rand_img(1) * 0.5
    assert psnr(a, a + 0.2) == pytest.approx(20.0, abs=1e-6)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        psnr(torch.zeros(3, 8, 8), torch.zeros(3, 8, 9))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_psnr_symmetric_and_flip_invariant(seed):
    a, b = rand_img(seed), rand_img(seed + 1)
    assert psnr(a, b) == pytest.approx(psnr(b, a), abs=1e-12)
    assert psnr(a, b) == pytest.approx(psnr(a.flip(-1), b.flip(-1)), abs=1e-9)


def test_psnr_decreases_with_noise():
    a = rand_img(2) * 0.5
    noise = torch.from_numpy(np.random.default_rng(3).uniform(-1, 1, a.shape))
    values = [psnr(a, a + amp * noise) for amp in (0.01, 0.05, 0.2)]
    assert values[0] > values[1] > values[2]


# ssim

def test_gaussian_window_matches_oracle():
    np.testing.assert_allclose(gaussian_window().numpy(), gaussian_window_oracle(), atol=1e-15)


def test_ssim_identical_is_one():
    a = rand_img(4)
    assert ssim(a, a) == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_ssim_matches_sliding_window_oracle(seed):
    a, b = rand_img(10 + seed), rand_img(20 + seed)
    assert ssim(a, b) == pytest.approx(ssim_oracle(a.numpy(), b.numpy()), abs=1e-6)


def test_ssim_negation_is_negative():
    # checkerboard: locally zero-mean under every window position
    yy, xx = torch.meshgrid(torch.arange(16), torch.arange(16), indexing="ij")
    a = (0.5 * (-1.0) ** (yy + xx)).double().expand(3, 16, 16)
    assert ssim(a, -a) < 0


def test_ssim_too_small():
    with pytest.raises(ValueError, match="window"):
        ssim(torch.zeros(3, 10, 10), torch.zeros(3, 10, 10))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_ssim_properties(seed):
    a, b = rand_img(seed), rand_img(seed + 7)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert ssim(a, b) == pytest.approx(ssim(a.flip(-1), b.flip(-1)), abs=1e-9)
    assert -1.0 <= ssim(a, b) <= 1.0


# perceptual distance

def test_perceptual_distance_properties():
    ext = build_feature_extractor(seed=0, stage_widths=(8, 16))
    a, b = rand_img(30).float(), rand_img(31).float()
    assert perceptual_distance(a, a, ext) == 0.0
    assert perceptual_distance(a, b, ext) == pytest.approx(perceptual_distance(b, a, ext), rel=1e-6)
    assert perceptual_distance(a, b, ext) > 0
    with pytest.raises(ValueError):
        perceptual_distance(a, b[:, :8], ext)


def test_perceptual_distance_monotone_under_interpolation_for_linear_extractor():
    conv = torch.nn.Conv2d(3, 4, 3, bias=False)
    torch.nn.init.normal_(conv.weight, generator=torch.Generator().manual_seed(0))
    conv = conv.double()

    def linear(x):
        return [conv(x)]

    a, b = rand_img(40), rand_img(41)
    dists = [perceptual_distance(torch.lerp(a, b, t), b, linear) for t in np.linspace(0, 1, 11)]
    assert all(d1 >= d2 - 1e-12 for d1, d2 in zip(dists, dists[1:]))
    assert dists[-1] == 0.0


# consistency / diversity

def test_violation_rate_copy_model_is_zero():
    lr = rand_img(50, (2, 3, 4, 4)).float()
    assert consistency_violation_rate(CopyModel(4), lr, sample_noise(3, 4, 0), 0.1) == 0.0


def test_violation_rate_opposite_sign_is_one():
    model = ConstantModel(torch.ones(3, 16, 16))
    lr = -torch.ones(1, 3, 4, 4)
    assert consistency_violation_rate(model, lr, sample_noise(3, 4, 0), 0.1) == 1.0


def test_violation_rate_full_slack_and_order():
    model = ConstantModel(rand_img(51).float())
    lr = rand_img(52, (2, 3, 4, 4)).float()
    zs = sample_noise(4, 4, 1)
    assert consistency_violation_rate(model, lr, zs, 2.0) == 0.0
    assert consistency_violation_rate(model, lr, zs, 0.1) == consistency_violation_rate(model, lr, zs[::-1], 0.1)
    with pytest.raises(ValueError):
        consistency_violation_rate(model, lr, [], 0.1)


def test_diversity_score_cases():
    lr = torch.zeros(1, 3, 4, 4)
    z_ignoring = ConstantModel(torch.zeros(3, 16, 16), grad_offset=False)
    assert diversity_score(z_ignoring, lr, sample_noise(4, 2, 0)) == 0.0
    model = ConstantModel(torch.zeros(3, 16, 16))
    zs = [torch.tensor([0.1, 0.0]), torch.tensor([0.4, 0.0])]
    assert diversity_score(model, lr, zs) == pytest.approx(0.3, abs=1e-6)
    zs = sample_noise(5, 2, 3)
    assert diversity_score(model, lr, zs) == pytest.approx(diversity_score(model, lr, zs[::-1]), abs=1e-12)
    with pytest.raises(ValueError):
        diversity_score(model, lr, zs[:1])


# grids and reports

def _samples(n=2):
    rng = np.random.default_rng(60)
    return [make_pair(torch.from_numpy(rng.uniform(-1, 1, (3, 16, 16)).astype(np.float32)), 4, str(i))
            for i in range(n)]


@pytest.mark.parametrize("z_count", [0, 3])
def test_grid_layout(tmp_path, z_count):
    model = ConstantModel(torch.zeros(3, 16, 16))
    grid = emit_grid(model, _samples(2), z_count, tmp_path / "g.png", noise_dim=2)
    assert grid.shape == (2 * 16, (3 + z_count) * 16, 3)
    assert read_png(tmp_path / "g.png").shape == grid.shape


def test_grid_bytes_deterministic(tmp_path):
    model = ConstantModel(torch.zeros(3, 16, 16))
    emit_grid(model, _samples(), 2, tmp_path / "a.png", noise_dim=2, seed=5)
    emit_grid(model, _samples(), 2, tmp_path / "b.png", noise_dim=2, seed=5)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_evaluate_report():
    samples = _samples(3)
    ext = build_feature_extractor(seed=0, stage_widths=(8,))
    report = evaluate(CopyModel(4), ext, samples, noise_dim=2, z_count=3)
    assert report.psnr == pytest.approx(report.baseline_psnr)
    assert report.consistency_violation_rate == 0.0
    assert report.diversity == 0.0
    fields = json.loads(report.to_json())
    for key in ("psnr", "ssim", "perceptual", "consistency_violation_rate", "diversity"):
        assert isinstance(fields[key], float)
    assert isinstance(report, MetricsReport)
