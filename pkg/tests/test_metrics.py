import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snapsplat.core import InvalidParameterError
from snapsplat.metrics import (
    FrameMetrics,
    gaussian_window,
    psnr,
    ssim,
    ssim_backward,
    trend_report,
)
from fdcheck import max_rel_err


def fm(p, s=0.9):
    return FrameMetrics(np.array([p]), np.array([s]))


# --- psnr ---


def test_psnr_identical_hits_cap():
    a = np.random.default_rng(0).uniform(size=(8, 8, 3))
    assert psnr(a, a) == 100.0


def test_psnr_constant_offset_closed_form():
    a = np.full((16, 16), 0.4)
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_psnr_matches_mse_oracle():
    rng = np.random.default_rng(1)
    a = rng.uniform(size=(13, 9, 3))
    b = rng.uniform(size=(13, 9, 3))
    want = 10 * np.log10(1.0 / np.mean((a - b) ** 2))
    assert psnr(a, b) == pytest.approx(want, abs=1e-9)
    assert psnr(a, b, peak=2.0) == pytest.approx(want + 10 * np.log10(4), abs=1e-9)


def test_psnr_shape_mismatch():
    with pytest.raises(InvalidParameterError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


@given(st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_psnr_symmetry(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(6, 6))
    b = rng.uniform(size=(6, 6))
    assert psnr(a, b) == pytest.approx(psnr(b, a), abs=1e-12)


# --- ssim ---


def ssim_direct_oracle(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, peak=1.0):
    """Straightforward double loop over window positions."""
    a = np.atleast_3d(np.asarray(a, float))
    b = np.atleast_3d(np.asarray(b, float))
    w1 = gaussian_window(window, sigma)
    w2 = np.outer(w1, w1)
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    vals = []
    H, W, C = a.shape
    for ch in range(C):
        for i in range(H - window + 1):
            for j in range(W - window + 1):
                pa = a[i : i + window, j : j + window, ch]
                pb = b[i : i + window, j : j + window, ch]
                ma = np.sum(w2 * pa)
                mb = np.sum(w2 * pb)
                va = np.sum(w2 * pa * pa) - ma * ma
                vb = np.sum(w2 * pb * pb) - mb * mb
                cab = np.sum(w2 * pa * pb) - ma * mb
                vals.append(
                    ((2 * ma * mb + c1) * (2 * cab + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2))
                )
    return float(np.mean(vals))


def test_ssim_identical_is_one():
    a = np.random.default_rng(2).uniform(size=(14, 14, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)


def test_ssim_anticorrelated_is_negative():
    rng = np.random.default_rng(3)
    a = (rng.uniform(size=(16, 16)) > 0.5).astype(float)
    assert ssim(a, 1.0 - a) < 0.0


def test_ssim_matches_direct_oracle():
    rng = np.random.default_rng(4)
    a = rng.uniform(size=(15, 13, 3))
    b = np.clip(a + rng.normal(scale=0.15, size=a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(ssim_direct_oracle(a, b), abs=1e-6)


def test_ssim_too_small_image_rejected():
    with pytest.raises(InvalidParameterError):
        ssim(np.zeros((10, 12)), np.zeros((10, 12)))


def test_ssim_symmetry_and_offset_monotonicity():
    rng = np.random.default_rng(5)
    a = rng.uniform(0.2, 0.8, size=(16, 16))
    b = rng.uniform(0.2, 0.8, size=(16, 16))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-9)
    vals = [ssim(a, a + eps) for eps in (0.0, 0.01, 0.05, 0.1)]
    assert vals[0] == pytest.approx(1.0, abs=1e-9)
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_ssim_backward_matches_finite_differences():
    rng = np.random.default_rng(6)
    a = rng.uniform(0.2, 0.8, size=(12, 12, 3))
    b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0, 1)
    g = ssim_backward(a, b)
    eps = 1e-6
    num = np.zeros_like(a)
    flat_a = a.reshape(-1)
    flat_n = num.reshape(-1)
    for i in range(flat_a.size):
        orig = flat_a[i]
        flat_a[i] = orig + eps
        fp = ssim(a, b)
        flat_a[i] = orig - eps
        fm_ = ssim(a, b)
        flat_a[i] = orig
        flat_n[i] = (fp - fm_) / (2 * eps)
    # floor sits above the FD noise (~1e-10 abs at eps=1e-6)
    assert max_rel_err(g, num, floor=1e-5) < 1e-4


def test_frame_metrics_means():
    rng = np.random.default_rng(7)
    truth = rng.uniform(size=(3, 16, 16, 3))
    noisy = np.clip(truth + rng.normal(scale=0.05, size=truth.shape), 0, 1)
    m = FrameMetrics.compute(noisy, truth)
    assert m.per_frame_psnr.shape == (3,)
    assert m.psnr_mean == pytest.approx(np.mean(m.per_frame_psnr))
    assert m.ssim_mean == pytest.approx(np.mean(m.per_frame_ssim))
    ident = FrameMetrics.compute(truth, truth)
    assert np.all(ident.per_frame_psnr == 100.0)
    assert np.allclose(ident.per_frame_ssim, 1.0, atol=1e-9)


# --- trend_report ---


def test_trend_report_reference_sweep_is_unimodal():
    pts = [
        (0.125, fm(30.32)),
        (0.25, fm(30.41)),
        (0.5, fm(29.04)),
        (0.75, fm(27.50)),
    ]
    table, verdict = trend_report(pts, kind="sweep")
    assert verdict is True
    lines = table.strip().split("\n")
    assert lines[0] == "knob,psnr_mean,ssim_mean"
    assert lines[1] == "0.125,30.3200,0.9000"
    assert len(lines) == 5


def test_trend_report_ablation():
    _, verdict = trend_report([("with", fm(37.75)), ("without", fm(33.08))], kind="ablation")
    assert verdict is True
    _, verdict = trend_report([("with", fm(30.0)), ("without", fm(33.0))], kind="ablation")
    assert verdict is False


def test_trend_report_degenerate_and_non_unimodal():
    flat = [(i, fm(25.0)) for i in range(4)]
    assert trend_report(flat, kind="sweep")[1] is True
    rising = [(i, fm(20.0 + i)) for i in range(4)]
    assert trend_report(rising, kind="sweep")[1] is True
    vshape = [(0, fm(30.0)), (1, fm(20.0)), (2, fm(30.0))]
    assert trend_report(vshape, kind="sweep")[1] is False
    with pytest.raises(InvalidParameterError):
        trend_report([(0, fm(1.0))], kind="sweep")
