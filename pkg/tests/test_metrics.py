import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

import oracles
from widefov.data import BLUR_SIGMA_RANGE, DegradationSpec, simulate_wide, synthetic_scene
from widefov.errors import ConfigError
from widefov.metrics import MetricReport, MetricRow, evaluate, perceptual_distance, psnr, ssim

LADDER = [(0.3, 0.0, 1), (1.0, 4 / 255, 2), (2.0, 12 / 255, 4), (3.0, 25 / 255, 8)]


def ladder(gt, seed):
    side = gt.shape[0]
    return [simulate_wide(gt, DegradationSpec(b, n, side // d), seed) for b, n, d in LADDER]


def test_psnr_cases(rng):
    a = rng.random((16, 16, 3))
    assert psnr(a, a) == 100.0
    assert psnr(np.zeros((4, 4, 3)), np.ones((4, 4, 3))) == 0.0
    b = rng.random((16, 16, 3))
    assert psnr(a, b) == pytest.approx(oracles.psnr(a, b), abs=1e-6)
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(ValueError):
        psnr(a, b[:8])


def test_ssim_identity_and_oracles(rng):
    a = rng.random((24, 20, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)
    c = np.full((16, 16, 3), 0.3)
    assert ssim(c, c) == pytest.approx(1.0, abs=1e-12)
    neg = 1.0 - a
    s = ssim(a, neg)
    assert s < 1
    assert s == pytest.approx(oracles.ssim(a, neg), abs=1e-9)
    ya, yn = (x @ np.array([0.299, 0.587, 0.114]) for x in (a, neg))
    ref = structural_similarity(ya, yn, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                data_range=1.0)
    assert s == pytest.approx(ref, abs=1e-6)
    with pytest.raises(ValueError, match="at least"):
        ssim(a[:10], a[:10])


@given(st.integers(0, 2**31))
def test_metric_symmetry(seed):
    r = np.random.default_rng(seed)
    a, b = r.random((16, 16, 3)), r.random((16, 16, 3))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1 <= ssim(a, b) <= 1
    assert 0 < psnr(a, b) <= 100


def test_perceptual_distance_identity_symmetry_and_backend(backbone, rng):
    a, b = rng.random((32, 32, 3)), rng.random((32, 32, 3))
    assert perceptual_distance(a, a, backbone) == 0
    assert perceptual_distance(a, b, backbone) == pytest.approx(perceptual_distance(b, a, backbone), rel=1e-6)
    with pytest.raises(ConfigError):
        perceptual_distance(a, b, None)
    assert evaluate(a, b, backbone).backend == "lpips-proxy"


@pytest.mark.parametrize("seed", range(10))
def test_degradation_ladder_is_monotone(seed, backbone):
    gt = synthetic_scene(64, seed)
    levels = ladder(gt, seed)
    d = [perceptual_distance(gt, x, backbone) for x in levels]
    p = [psnr(gt, x) for x in levels]
    assert all(x < y for x, y in zip(d, d[1:])), d
    assert all(x > y for x, y in zip(p, p[1:])), p
    assert LADDER[0][0] >= BLUR_SIGMA_RANGE[0]


def test_report_formats(backbone, rng):
    rep = MetricReport(metadata={"ssim_channel": "luminance"})
    a = rng.random((16, 16, 3))
    rep.add(evaluate(a, a, backbone, "same"))
    rep.add(MetricRow("x", 30.0, 0.9, 0.1))
    data = json.loads(rep.to_json())
    assert data["rows"][0] == {"id": "same", "psnr_db": 100.0, "ssim": 1.0, "perceptual_distance": 0.0,
                               "backend": "lpips-proxy"}
    assert data["mean"]["psnr_db"] == pytest.approx(65.0)
    lines = rep.to_csv().strip().splitlines()
    assert lines[0] == "id,psnr_db,ssim,perceptual_distance,backend" and len(lines) == 3
    assert "mean" in rep.to_text()
