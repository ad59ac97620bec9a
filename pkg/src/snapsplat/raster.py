"""Differentiable tile-based rasterization of 3D Gaussian scenes.

The forward pass projects each Gaussian to screen space through the local
affine (Jacobian) approximation of the pinhole projection, bins the
footprints into 16x16 pixel tiles, and alpha-blends in ascending depth
order. The backward pass is a hand-written adjoint of the whole chain:
blend weights, 2D conic, projection (including the Jacobian's dependence
on the camera-frame mean), 3D covariance, and the activations.

Internally the module works on packed arrays in a "pre-activated" form
(world means, 3D covariances, blend opacities, RGB colors) so callers can
insert extra differentiable stages between the scene parameters and the
rasterizer. The public render/render_backward pair wires the standard
scene parameterization to that core.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import (
    Camera,
    GaussianScene,
    InvalidParameterError,
    covariance_backward,
    covariance_from_params,
    eval_sh,
    eval_sh_backward,
    sigmoid,
)

TILE = _kernels.TILE
ALPHA_FLOOR = _kernels.ALPHA_FLOOR
ALPHA_CLAMP = _kernels.ALPHA_CLAMP
T_EARLY_STOP = _kernels.T_EARLY_STOP
NEAR_PLANE = 0.01
GUARD_BAND = 1.3
DILATION_2D = 0.3
# Footprint cutoff in sigmas. At 3.5 sigma the blend weight is at most
# exp(-3.5^2/2) ~= 0.0022, below the 1/255 contribution floor, so tile
# binning never changes the rendered image and the renderer stays
# continuous across binning boundaries.
BBOX_SIGMA = 3.5


@dataclass
class Projected2DGaussian:
    mean2d: np.ndarray  # pixels
    cov2d: np.ndarray  # symmetric 2x2, pixels^2, dilation included
    depth: float  # camera-frame z
    color: np.ndarray
    alpha_base: float
    source_index: int


@dataclass
class RenderedImage:
    pixels: np.ndarray  # (H, W, 3)
    final_transmittance: np.ndarray  # (H, W)


@dataclass
class SceneGradients:
    d_mu: np.ndarray
    d_rot: np.ndarray
    d_log_scale: np.ndarray
    d_opacity_logit: np.ndarray
    d_sh: np.ndarray
    d_mean2d_norm: np.ndarray  # per-Gaussian |dL/d mean2d|, for density control


def _view_dirs(mu, cam: Camera):
    d = mu - cam.center
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    safe = np.where(n > 1e-12, n, 1.0)
    d = d / safe
    d[(n <= 1e-12)[:, 0]] = (0.0, 0.0, 1.0)
    return d


def _project_arrays(mu, cov3d, cam: Camera):
    """Project means/covariances to screen space and cull.

    Returns a dict of packed arrays over the surviving Gaussians plus the
    intermediates the backward pass reuses.
    """
    n = mu.shape[0]
    t_cam = mu @ cam.R.T + cam.t
    tz = t_cam[:, 2]
    in_front = tz > NEAR_PLANE
    # guard against divide-by-zero on culled rows
    tz_safe = np.where(in_front, tz, 1.0)

    mean2d = np.empty((n, 2), dtype=np.float64)
    mean2d[:, 0] = cam.fx * t_cam[:, 0] / tz_safe + cam.cx
    mean2d[:, 1] = cam.fy * t_cam[:, 1] / tz_safe + cam.cy

    J = np.zeros((n, 2, 3), dtype=np.float64)
    J[:, 0, 0] = cam.fx / tz_safe
    J[:, 1, 1] = cam.fy / tz_safe
    J[:, 0, 2] = -cam.fx * t_cam[:, 0] / tz_safe**2
    J[:, 1, 2] = -cam.fy * t_cam[:, 1] / tz_safe**2
    M = J @ cam.R  # (n, 2, 3)
    cov2d = np.einsum("nij,njk,nlk->nil", M, cov3d, M)
    cov2d[:, 0, 0] += DILATION_2D
    cov2d[:, 1, 1] += DILATION_2D

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    det = a * c - b * b
    det_ok = det > 0.0
    det_safe = np.where(det_ok, det, 1.0)
    conic = np.stack([c / det_safe, -b / det_safe, a / det_safe], axis=1)
    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = BBOX_SIGMA * np.sqrt(np.maximum(lam_max, 0.0))

    gx0 = -(GUARD_BAND - 1.0) / 2.0 * cam.width
    gx1 = cam.width - gx0
    gy0 = -(GUARD_BAND - 1.0) / 2.0 * cam.height
    gy1 = cam.height - gy0
    inside_guard = (
        (mean2d[:, 0] + radius >= gx0)
        & (mean2d[:, 0] - radius <= gx1)
        & (mean2d[:, 1] + radius >= gy0)
        & (mean2d[:, 1] - radius <= gy1)
    )
    valid = in_front & det_ok & inside_guard
    return {
        "valid": valid,
        "t_cam": t_cam,
        "mean2d": mean2d,
        "cov2d": cov2d,
        "conic": conic,
        "radius": radius,
        "depth": tz,
        "M": M,
    }


def project(scene: GaussianScene, cam: Camera):
    """Screen-space footprints of the non-culled Gaussians."""
    cov3d = covariance_from_params(scene.rot, scene.log_scale)
    p = _project_arrays(scene.mu, cov3d, cam)
    dirs = _view_dirs(scene.mu, cam)
    colors = eval_sh(scene.sh, dirs, scene.sh_degree)
    sigma = sigmoid(scene.opacity_logit)
    out = []
    for i in np.flatnonzero(p["valid"]):
        out.append(
            Projected2DGaussian(
                mean2d=p["mean2d"][i].copy(),
                cov2d=p["cov2d"][i].copy(),
                depth=float(p["depth"][i]),
                color=colors[i].copy(),
                alpha_base=float(sigma[i]),
                source_index=int(i),
            )
        )
    return out


def depth_sort(projected):
    """Stable ascending depth order; ties broken by source index."""
    if isinstance(projected, (list, tuple)):
        depth = np.array([g.depth for g in projected], dtype=np.float64)
        src = np.array([g.source_index for g in projected], dtype=np.int64)
    else:
        depth = np.asarray(projected, dtype=np.float64)
        src = np.arange(depth.shape[0], dtype=np.int64)
    if not np.all(np.isfinite(depth)):
        raise InvalidParameterError("depths must be finite for sorting")
    return np.lexsort((src, depth))


def _bin_tiles(mean2d, radius, order, width, height):
    """CSR tile lists (offsets, item indices) in global depth order."""
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    n_tiles = tiles_x * tiles_y
    n = mean2d.shape[0]
    if n == 0:
        return tiles_x, np.zeros(n_tiles + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    x0 = np.clip(np.floor((mean2d[:, 0] - radius) / TILE).astype(np.int64), 0, tiles_x)
    x1 = np.clip(np.floor((mean2d[:, 0] + radius) / TILE).astype(np.int64) + 1, 0, tiles_x)
    y0 = np.clip(np.floor((mean2d[:, 1] - radius) / TILE).astype(np.int64), 0, tiles_y)
    y1 = np.clip(np.floor((mean2d[:, 1] + radius) / TILE).astype(np.int64) + 1, 0, tiles_y)
    counts = np.maximum(x1 - x0, 0) * np.maximum(y1 - y0, 0)
    starts = np.concatenate([[0], np.cumsum(counts)])
    total = int(starts[-1])
    keys, items = _kernels.expand_tiles(x0, x1, y0, y1, rank, tiles_x, starts, total)
    srt = np.argsort(keys, kind="stable")
    keys = keys[srt]
    items = items[srt]
    tile_of = keys // n
    offsets = np.zeros(n_tiles + 1, dtype=np.int64)
    np.add.at(offsets, tile_of + 1, 1)
    offsets = np.cumsum(offsets)
    return tiles_x, offsets, items


def render_arrays(mu, cov3d, sigma, colors, background, cam: Camera):
    """Core forward pass on pre-activated arrays.

    Returns (pixels, final_transmittance, ctx) where ctx carries the
    projection intermediates for the matching backward call.
    """
    p = _project_arrays(mu, cov3d, cam)
    valid = p["valid"]
    idx = np.flatnonzero(valid)
    bg = np.asarray(background, dtype=np.float64)
    H, W = cam.height, cam.width
    if idx.size == 0:
        img = np.tile(bg, (H, W, 1))
        ctx = {"idx": idx, "p": p, "n": mu.shape[0]}
        return img, np.ones((H, W)), ctx
    mean2d = np.ascontiguousarray(p["mean2d"][idx])
    conic = np.ascontiguousarray(p["conic"][idx])
    col = np.ascontiguousarray(colors[idx])
    sig = np.ascontiguousarray(sigma[idx])
    order = depth_sort_arrays(p["depth"][idx], idx)
    tiles_x, offsets, items = _bin_tiles(mean2d, p["radius"][idx], order, W, H)
    img, t_fin, last = _kernels.forward(
        H, W, tiles_x, mean2d, conic, col, sig, offsets, items, bg
    )
    ctx = {
        "idx": idx,
        "p": p,
        "n": mu.shape[0],
        "mean2d": mean2d,
        "conic": conic,
        "col": col,
        "sig": sig,
        "tiles_x": tiles_x,
        "offsets": offsets,
        "items": items,
        "t_fin": t_fin,
        "last": last,
    }
    return img, t_fin, ctx


def depth_sort_arrays(depth, source_index):
    if not np.all(np.isfinite(depth)):
        raise InvalidParameterError("depths must be finite for sorting")
    return np.lexsort((np.asarray(source_index), np.asarray(depth)))


def render_arrays_backward(mu, cov3d, sigma, colors, background, cam: Camera, d_img, ctx=None):
    """Adjoint of render_arrays.

    Returns a dict with d_mu, d_cov3d (full 3x3 per Gaussian), d_sigma,
    d_colors, and d_mean2d over the input arrays (zeros for culled rows).
    """
    H, W = cam.height, cam.width
    if d_img.shape != (H, W, 3):
        raise InvalidParameterError("upstream gradient shape must match the image")
    if ctx is None:
        _, _, ctx = render_arrays(mu, cov3d, sigma, colors, background, cam)
    n = mu.shape[0]
    out = {
        "d_mu": np.zeros((n, 3)),
        "d_cov3d": np.zeros((n, 3, 3)),
        "d_sigma": np.zeros(n),
        "d_colors": np.zeros((n, 3)),
        "d_mean2d": np.zeros((n, 2)),
    }
    idx = ctx["idx"]
    if idx.size == 0:
        return out
    bg = np.asarray(background, dtype=np.float64)
    d_mean2d, d_conic, d_sigma, d_color = _kernels.backward(
        H,
        W,
        ctx["tiles_x"],
        ctx["mean2d"],
        ctx["conic"],
        ctx["col"],
        ctx["sig"],
        ctx["offsets"],
        ctx["items"],
        bg,
        np.ascontiguousarray(d_img, dtype=np.float64),
        ctx["t_fin"],
        ctx["last"],
    )
    p = ctx["p"]
    M = p["M"][idx]
    t_cam = p["t_cam"][idx]
    cov3d_v = cov3d[idx]

    # conic = inverse of cov2d; d(inv) = -inv dQ inv with the off-diagonal
    # split evenly between the two symmetric entries
    dQ = np.empty((idx.size, 2, 2))
    dQ[:, 0, 0] = d_conic[:, 0]
    dQ[:, 0, 1] = 0.5 * d_conic[:, 1]
    dQ[:, 1, 0] = 0.5 * d_conic[:, 1]
    dQ[:, 1, 1] = d_conic[:, 2]
    Q = np.empty((idx.size, 2, 2))
    Q[:, 0, 0] = ctx["conic"][:, 0]
    Q[:, 0, 1] = ctx["conic"][:, 1]
    Q[:, 1, 0] = ctx["conic"][:, 1]
    Q[:, 1, 1] = ctx["conic"][:, 2]
    d_cov2d = -np.einsum("nij,njk,nkl->nil", Q, dQ, Q)

    # cov2d = M cov3d M^T + dilation
    d_cov3d = np.einsum("nji,njk,nkl->nil", M, d_cov2d, M)
    d_M = np.einsum("nij,njk,nkl->nil", d_cov2d + np.swapaxes(d_cov2d, 1, 2), M, cov3d_v)
    d_J = np.einsum("nij,nkj->nik", d_M, np.broadcast_to(cam.R, (idx.size, 3, 3)))

    fx, fy = cam.fx, cam.fy
    tx, ty_, tz = t_cam[:, 0], t_cam[:, 1], t_cam[:, 2]
    d_t = np.zeros((idx.size, 3))
    d_t[:, 0] = d_J[:, 0, 2] * (-fx / tz**2) + d_mean2d[:, 0] * (fx / tz)
    d_t[:, 1] = d_J[:, 1, 2] * (-fy / tz**2) + d_mean2d[:, 1] * (fy / tz)
    d_t[:, 2] = (
        d_J[:, 0, 0] * (-fx / tz**2)
        + d_J[:, 1, 1] * (-fy / tz**2)
        + d_J[:, 0, 2] * (2.0 * fx * tx / tz**3)
        + d_J[:, 1, 2] * (2.0 * fy * ty_ / tz**3)
        + d_mean2d[:, 0] * (-fx * tx / tz**2)
        + d_mean2d[:, 1] * (-fy * ty_ / tz**2)
    )
    d_mu = d_t @ cam.R  # t_cam = R mu + t  =>  d_mu = R^T d_t

    out["d_mu"][idx] = d_mu
    out["d_cov3d"][idx] = d_cov3d
    out["d_sigma"][idx] = d_sigma
    out["d_colors"][idx] = d_color
    out["d_mean2d"][idx] = d_mean2d
    return out


def render(scene: GaussianScene, cam: Camera, deterministic: bool = True) -> RenderedImage:
    """Rasterize a scene. The kernels are serial, so output is always
    bit-deterministic; the flag is part of the contract surface."""
    del deterministic
    cov3d = covariance_from_params(scene.rot, scene.log_scale)
    sigma = np.atleast_1d(sigmoid(scene.opacity_logit))
    dirs = _view_dirs(scene.mu, cam)
    colors = eval_sh(scene.sh, dirs, scene.sh_degree)
    img, t_fin, _ = render_arrays(scene.mu, cov3d, sigma, colors, scene.background, cam)
    return RenderedImage(pixels=img, final_transmittance=t_fin)


def render_backward(
    scene: GaussianScene, cam: Camera, upstream, deterministic: bool = True
) -> SceneGradients:
    """Gradients of sum(upstream * pixels) for every scene parameter."""
    del deterministic
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (cam.height, cam.width, 3):
        raise InvalidParameterError("upstream gradient shape must match the image")
    cov3d = covariance_from_params(scene.rot, scene.log_scale)
    sigma = np.atleast_1d(sigmoid(scene.opacity_logit))
    dirs = _view_dirs(scene.mu, cam)
    colors = eval_sh(scene.sh, dirs, scene.sh_degree)
    g = render_arrays_backward(
        scene.mu, cov3d, sigma, colors, scene.background, cam, upstream
    )
    d_rot, d_log_scale = covariance_backward(scene.rot, scene.log_scale, g["d_cov3d"])
    d_logit = g["d_sigma"] * sigma * (1.0 - sigma)
    d_sh = eval_sh_backward(scene.sh, dirs, scene.sh_degree, g["d_colors"])
    return SceneGradients(
        d_mu=g["d_mu"],
        d_rot=d_rot,
        d_log_scale=d_log_scale,
        d_opacity_logit=d_logit,
        d_sh=d_sh,
        d_mean2d_norm=np.linalg.norm(g["d_mean2d"], axis=1),
    )


def visibility_info(mu, cov3d, cam: Camera):
    """Per-Gaussian visibility mask and screen radius after culling."""
    p = _project_arrays(mu, cov3d, cam)
    radius = np.where(p["valid"], p["radius"], 0.0)
    return p["valid"], radius
