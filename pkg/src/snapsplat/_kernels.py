"""Scalar tile-rasterization kernels, jitted with numba.

Single-threaded on purpose: sequential per-pixel loops make both passes
bit-deterministic, and fastmath stays off so the backward pass agrees
with finite differences to full double precision.
"""
import math

import numpy as np
from numba import njit

TILE = 16
ALPHA_FLOOR = 1.0 / 255.0
ALPHA_CLAMP = 0.99
T_EARLY_STOP = 1e-4


@njit(cache=True)
def expand_tiles(x0, x1, y0, y1, rank, tiles_x, starts, total):
    """Duplicate each Gaussian into every tile its bbox covers.

    Key encodes (tile, depth rank) so one sort yields per-tile lists in
    global depth order.
    """
    n = x0.shape[0]
    keys = np.empty(total, dtype=np.int64)
    items = np.empty(total, dtype=np.int64)
    for i in range(n):
        pos = starts[i]
        for ty in range(y0[i], y1[i]):
            base = ty * tiles_x
            for tx in range(x0[i], x1[i]):
                keys[pos] = (base + tx) * n + rank[i]
                items[pos] = i
                pos += 1
    return keys, items


@njit(cache=True)
def forward(H, W, tiles_x, mean2d, conic, color, sigma, tile_offsets, tile_items, bg):
    """Alpha-blend binned Gaussians front to back.

    Returns (image H*W*3, final transmittance H*W, last blended item per
    pixel as a flat index into tile_items, -1 if none).
    """
    img = np.empty((H, W, 3), dtype=np.float64)
    t_fin = np.empty((H, W), dtype=np.float64)
    last = np.full((H, W), -1, dtype=np.int64)
    for py in range(H):
        ty = py // TILE
        for px in range(W):
            tx = px // TILE
            tile = ty * tiles_x + tx
            start = tile_offsets[tile]
            end = tile_offsets[tile + 1]
            T = 1.0
            r = 0.0
            g = 0.0
            b = 0.0
            last_k = -1
            for k in range(start, end):
                i = tile_items[k]
                dx = px - mean2d[i, 0]
                dy = py - mean2d[i, 1]
                power = (
                    -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy)
                    - conic[i, 1] * dx * dy
                )
                if power > 0.0:
                    continue
                alpha = sigma[i] * math.exp(power)
                if alpha > ALPHA_CLAMP:
                    alpha = ALPHA_CLAMP
                if alpha < ALPHA_FLOOR:
                    continue
                test_T = T * (1.0 - alpha)
                if test_T < T_EARLY_STOP:
                    break
                w = T * alpha
                r += w * color[i, 0]
                g += w * color[i, 1]
                b += w * color[i, 2]
                T = test_T
                last_k = k
            img[py, px, 0] = r + T * bg[0]
            img[py, px, 1] = g + T * bg[1]
            img[py, px, 2] = b + T * bg[2]
            t_fin[py, px] = T
            last[py, px] = last_k
    return img, t_fin, last


@njit(cache=True)
def backward(
    H,
    W,
    tiles_x,
    mean2d,
    conic,
    color,
    sigma,
    tile_offsets,
    tile_items,
    bg,
    d_img,
    t_fin,
    last,
):
    """Adjoint of forward. Walks each pixel's blend list back to front.

    Returns per-Gaussian gradients (d_mean2d, d_conic, d_sigma, d_color);
    d_conic is (qa, qb, qc) with qb the single off-diagonal parameter.
    Accumulation order is fixed by the pixel raster order, so results are
    bit-reproducible.
    """
    n = mean2d.shape[0]
    d_mean2d = np.zeros((n, 2), dtype=np.float64)
    d_conic = np.zeros((n, 3), dtype=np.float64)
    d_sigma = np.zeros(n, dtype=np.float64)
    d_color = np.zeros((n, 3), dtype=np.float64)
    for py in range(H):
        ty = py // TILE
        for px in range(W):
            tx = px // TILE
            tile = ty * tiles_x + tx
            start = tile_offsets[tile]
            last_k = last[py, px]
            if last_k < start:
                continue
            dc0 = d_img[py, px, 0]
            dc1 = d_img[py, px, 1]
            dc2 = d_img[py, px, 2]
            if dc0 == 0.0 and dc1 == 0.0 and dc2 == 0.0:
                continue
            T_run = t_fin[py, px]
            # suffix blend R = sum over later items of T*alpha*c, plus T_fin*bg
            R0 = T_run * bg[0]
            R1 = T_run * bg[1]
            R2 = T_run * bg[2]
            for k in range(last_k, start - 1, -1):
                i = tile_items[k]
                dx = px - mean2d[i, 0]
                dy = py - mean2d[i, 1]
                qa = conic[i, 0]
                qb = conic[i, 1]
                qc = conic[i, 2]
                power = -0.5 * (qa * dx * dx + qc * dy * dy) - qb * dx * dy
                if power > 0.0:
                    continue
                gval = math.exp(power)
                alpha = sigma[i] * gval
                clamped = alpha > ALPHA_CLAMP
                if clamped:
                    alpha = ALPHA_CLAMP
                if alpha < ALPHA_FLOOR:
                    continue
                one_m = 1.0 - alpha
                T_i = T_run / one_m  # transmittance before this item
                w = T_i * alpha
                d_color[i, 0] += dc0 * w
                d_color[i, 1] += dc1 * w
                d_color[i, 2] += dc2 * w
                d_alpha = (
                    dc0 * (T_i * color[i, 0] - R0 / one_m)
                    + dc1 * (T_i * color[i, 1] - R1 / one_m)
                    + dc2 * (T_i * color[i, 2] - R2 / one_m)
                )
                if not clamped:
                    d_sigma[i] += d_alpha * gval
                    d_power = d_alpha * alpha
                    d_conic[i, 0] += d_power * (-0.5 * dx * dx)
                    d_conic[i, 1] += d_power * (-dx * dy)
                    d_conic[i, 2] += d_power * (-0.5 * dy * dy)
                    # dx = px - mx, so d/dmx flips sign
                    d_mean2d[i, 0] += d_power * (qa * dx + qb * dy)
                    d_mean2d[i, 1] += d_power * (qc * dy + qb * dx)
                R0 += w * color[i, 0]
                R1 += w * color[i, 1]
                R2 += w * color[i, 2]
                T_run = T_i
    return d_mean2d, d_conic, d_sigma, d_color
