"""Image quality metrics (PSNR, Gaussian-windowed SSIM) and trend reports.

SSIM follows the canonical formulation: 11x11 Gaussian windows with
sigma 1.5, C1 = (0.01 peak)^2, C2 = (0.03 peak)^2, biased local moments,
valid-mode windows (no padding), channels averaged. A hand-written
adjoint makes the structural term usable inside training losses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import InvalidParameterError

PSNR_CAP_DB = 100.0


def psnr(a, b, peak=1.0):
    """10 log10(peak^2 / MSE), capped at 100 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidParameterError("psnr needs equal shapes")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(peak * peak / mse), PSNR_CAP_DB)


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _sep_valid(img, w):
    """Separable valid-mode correlation along the two leading axes."""
    k = w.shape[0]
    t = sliding_window_view(img, k, axis=0) @ w
    return sliding_window_view(t, k, axis=1) @ w


def _sep_valid_adjoint(grad, w, out_shape):
    """Adjoint of _sep_valid; w is symmetric so this is a full correlation."""
    k = w.shape[0]
    pad = [(k - 1, k - 1), (k - 1, k - 1)] + [(0, 0)] * (grad.ndim - 2)
    padded = np.pad(grad, pad)
    out = _sep_valid(padded, w[::-1])
    assert out.shape[:2] == out_shape[:2]
    return out


def _ssim_stats(a, b, window, sigma, k1, k2, peak):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidParameterError("ssim needs equal shapes")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.shape[0] < window or a.shape[1] < window:
        raise InvalidParameterError(f"ssim needs images at least {window}x{window}")
    w = gaussian_window(window, sigma)
    mu_a = _sep_valid(a, w)
    mu_b = _sep_valid(b, w)
    var_a = _sep_valid(a * a, w) - mu_a**2
    var_b = _sep_valid(b * b, w) - mu_b**2
    cov = _sep_valid(a * b, w) - mu_a * mu_b
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    a1 = 2.0 * mu_a * mu_b + c1
    a2 = 2.0 * cov + c2
    b1 = mu_a**2 + mu_b**2 + c1
    b2 = var_a + var_b + c2
    s = (a1 * a2) / (b1 * b2)
    return a, b, w, mu_a, mu_b, a1, a2, b1, b2, s


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, peak=1.0):
    """Mean local SSIM over valid window positions, channels averaged."""
    return float(np.mean(_ssim_stats(a, b, window, sigma, k1, k2, peak)[-1]))


def ssim_backward(a, b, d_out=1.0, window=11, sigma=1.5, k1=0.01, k2=0.03, peak=1.0):
    """d(ssim(a, b))/da, scaled by the scalar upstream d_out."""
    orig_shape = np.asarray(a).shape
    a, b, w, mu_a, mu_b, a1, a2, b1, b2, s = _ssim_stats(
        a, b, window, sigma, k1, k2, peak
    )
    n = s.size
    # dS per local window, then chain to the window moments
    d_s = d_out / n
    d_a1 = d_s * a2 / (b1 * b2)
    d_a2 = d_s * a1 / (b1 * b2)
    d_b1 = -d_s * s / b1
    d_b2 = -d_s * s / b2
    d_mu_a = 2.0 * mu_b * d_a1 + 2.0 * mu_a * d_b1
    d_var_a = d_b2
    d_cov = 2.0 * d_a2
    # moments are windowed sums: mu_a = W a, var_a = W a^2 - mu_a^2,
    # cov = W ab - mu_a mu_b, so per pixel:
    # da = W^T(d_mu_a - 2 mu_a d_var_a - mu_b d_cov)
    #      + 2a W^T(d_var_a) + b W^T(d_cov)
    shape = a.shape
    da = _sep_valid_adjoint(d_mu_a - 2.0 * mu_a * d_var_a - mu_b * d_cov, w, shape)
    da += 2.0 * a * _sep_valid_adjoint(d_var_a, w, shape)
    da += b * _sep_valid_adjoint(d_cov, w, shape)
    return da.reshape(orig_shape)


@dataclass
class FrameMetrics:
    """Per-frame PSNR/SSIM plus their means across the burst."""

    per_frame_psnr: np.ndarray
    per_frame_ssim: np.ndarray

    @property
    def psnr_mean(self):
        return float(np.mean(self.per_frame_psnr))

    @property
    def ssim_mean(self):
        return float(np.mean(self.per_frame_ssim))

    @classmethod
    def compute(cls, recovered, truth, peak=1.0):
        recovered = np.asarray(recovered, dtype=np.float64)
        truth = np.asarray(truth, dtype=np.float64)
        if recovered.shape != truth.shape:
            raise InvalidParameterError("frame stacks must share a shape")
        ps = [psnr(r, t, peak) for r, t in zip(recovered, truth)]
        ss = [ssim(r, t, peak=peak) for r, t in zip(recovered, truth)]
        return cls(np.asarray(ps), np.asarray(ss))


def _unimodal_up_down(values):
    """True when the sequence rises (weakly) to a peak then falls (weakly)."""
    v = np.asarray(values, dtype=np.float64)
    m = int(np.argmax(v))
    return bool(np.all(np.diff(v[: m + 1]) >= 0) and np.all(np.diff(v[m:]) <= 0))


def trend_report(results, kind="sweep"):
    """CSV table plus a verdict for a sweep or an ablation.

    results: list of (knob, FrameMetrics). kind="sweep" checks the mean
    PSNR for a rise-then-fall shape over the results in the given order
    (flat or monotone sequences count as the degenerate case and pass);
    kind="ablation" expects the pair (with, without) and checks
    with >= without.
    """
    if len(results) < 2:
        raise InvalidParameterError("trend_report needs at least 2 points")
    lines = ["knob,psnr_mean,ssim_mean"]
    for knob, m in results:
        lines.append(f"{knob},{m.psnr_mean:.4f},{m.ssim_mean:.4f}")
    table = "\n".join(lines) + "\n"
    psnrs = [m.psnr_mean for _, m in results]
    if kind == "sweep":
        verdict = _unimodal_up_down(psnrs)
    elif kind == "ablation":
        verdict = psnrs[0] >= psnrs[1]
    else:
        raise InvalidParameterError(f"unknown trend kind: {kind}")
    return table, verdict
