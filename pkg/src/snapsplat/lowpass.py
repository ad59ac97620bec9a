"""High-frequency low-pass filter for per-stamp Gaussians.

Thin splats can fall below the camera's sampling interval once the
transform field moves them, which shows up as high-frequency artifacts.
The fix: bound each Gaussian's world-space footprint from below by
convolving an isotropic low-pass Gaussian of variance gamma/nu into its
covariance, where nu is the Gaussian's maximal sampling frequency (focal
over depth) across all pose stamps, and rescale opacity so total energy
is conserved.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Camera, InvalidParameterError
from .raster import NEAR_PLANE


@dataclass
class SamplingRateTable:
    """Per-Gaussian maximal sampling frequency across stamps.

    max_freq is 0 for Gaussians with no valid stamp (behind the near
    plane everywhere); those are left unfiltered and culled downstream.
    """

    max_freq: np.ndarray  # (N,) pixels per world unit
    depths: np.ndarray  # (S, N) camera-frame z per stamp
    focal: float

    @property
    def valid(self):
        return self.max_freq > 0.0


def max_sampling_frequency(mu_per_stamp, cam: Camera, stamps=None) -> float:
    """nu = max over stamps of focal/depth for one Gaussian.

    Stamps that place the Gaussian behind the near plane are skipped;
    returns 0.0 when none is valid, marking the Gaussian
    unfiltered-and-culled for this step.
    """
    del stamps  # stamps only carry ordering; depth comes from the means
    f = max(cam.fx, cam.fy)
    best = 0.0
    for mu in np.atleast_2d(np.asarray(mu_per_stamp, dtype=np.float64)):
        d = float(cam.R[2] @ mu + cam.t[2])
        if d > NEAR_PLANE:
            best = max(best, f / d)
    return best


def build_table(mu_per_stamp, cam: Camera) -> SamplingRateTable:
    """Vectorized table over (S stamps, N Gaussians, 3) transformed means."""
    mus = np.asarray(mu_per_stamp, dtype=np.float64)
    if mus.ndim != 3:
        raise InvalidParameterError("expected stamped means of shape (S, N, 3)")
    depths = mus @ cam.R[2] + cam.t[2]  # (S, N)
    f = max(cam.fx, cam.fy)
    freq = np.where(depths > NEAR_PLANE, f / np.where(depths > NEAR_PLANE, depths, 1.0), 0.0)
    return SamplingRateTable(max_freq=freq.max(axis=0), depths=depths, focal=f)


def _check_pd(cov):
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise InvalidParameterError("covariance must be positive definite") from None


def apply_filter(cov, sigma, nu_hat, gamma):
    """Widen covariances and rescale opacities (per Gaussian).

    cov: (..., 3, 3) positive definite; sigma: (...,) opacity; nu_hat:
    (...,) sampling frequency (entries <= 0 pass through unfiltered);
    gamma > 0. Returns (cov_filtered, sigma_filtered).
    """
    cov = np.asarray(cov, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    nu = np.asarray(nu_hat, dtype=np.float64)
    if gamma <= 0:
        raise InvalidParameterError("gamma must be positive")
    _check_pd(cov)
    c = np.where(nu > 0.0, gamma / np.where(nu > 0.0, nu, 1.0), 0.0)
    cov_f = cov + c[..., None, None] * np.eye(3)
    kappa = np.sqrt(np.linalg.det(cov) / np.linalg.det(cov_f))
    return cov_f, kappa * sigma


def apply_filter_backward(cov, sigma, nu_hat, gamma, d_cov_f, d_sigma_f):
    """Adjoint of apply_filter; nu_hat is a constant (no gradient).

    Takes full-matrix upstream d_cov_f plus d_sigma_f, returns
    (d_cov, d_sigma) on the unfiltered inputs.
    """
    cov = np.asarray(cov, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    nu = np.asarray(nu_hat, dtype=np.float64)
    d_cov_f = np.asarray(d_cov_f, dtype=np.float64)
    d_sigma_f = np.asarray(d_sigma_f, dtype=np.float64)
    c = np.where(nu > 0.0, gamma / np.where(nu > 0.0, nu, 1.0), 0.0)
    cov_f = cov + c[..., None, None] * np.eye(3)
    det = np.linalg.det(cov)
    det_f = np.linalg.det(cov_f)
    kappa = np.sqrt(det / det_f)
    d_sigma = kappa * d_sigma_f
    d_kappa = sigma * d_sigma_f
    # kappa^2 = det/det_f: d kappa/d cov = kappa/2 (cov^-1 - cov_f^-1)
    inv = np.linalg.inv(cov)
    inv_f = np.linalg.inv(cov_f)
    d_cov = d_cov_f + (d_kappa * kappa * 0.5)[..., None, None] * (inv - inv_f)
    return d_cov, d_sigma
