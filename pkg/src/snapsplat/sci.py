"""Snapshot-compressive-imaging forward model.

A burst of B latent frames is modulated by per-frame binary exposure
masks and summed into a single compressed image: Y = sum_i X_i * M_i + Z.
Masks are i.i.d. Bernoulli with a target overlap ratio (the fraction of
exposures per pixel across the burst). The training loss compares a
predicted compressed image against the observed one with L1 plus a
structural dissimilarity term.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import FileFormatError, InvalidParameterError
from .metrics import ssim, ssim_backward

MASK_MAGIC = b"SCIM"
MASK_VERSION = 1


@dataclass
class MaskSet:
    """B binary exposure masks plus their generation parameters."""

    masks: np.ndarray  # (B, H, W) of {0, 1}
    overlap_ratio: float
    seed: int

    def __post_init__(self):
        self.masks = np.asarray(self.masks)
        if self.masks.ndim != 3:
            raise InvalidParameterError("masks must have shape (B, H, W)")
        if not np.all((self.masks == 0) | (self.masks == 1)):
            raise InvalidParameterError("mask entries must be 0 or 1")
        self.masks = self.masks.astype(np.uint8)

    @property
    def frame_count(self):
        return self.masks.shape[0]

    @property
    def shape(self):
        return self.masks.shape[1:]


@dataclass
class CompressedImage:
    """Accumulated exposure; pixel values reach up to frame_count."""

    pixels: np.ndarray  # (H, W, 3), non-negative
    frame_count: int


def generate_masks(height, width, frame_count, overlap_ratio, seed) -> MaskSet:
    """Seeded i.i.d. Bernoulli(overlap_ratio) masks; bit-deterministic."""
    if frame_count < 1:
        raise InvalidParameterError("need at least one frame")
    if not 0.0 <= overlap_ratio <= 1.0:
        raise InvalidParameterError("overlap ratio must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    bits = rng.random(size=(frame_count, height, width)) < overlap_ratio
    return MaskSet(bits.astype(np.uint8), float(overlap_ratio), int(seed))


def measure_overlap_ratio(mask_set: MaskSet):
    """Per-pixel OR(x, y) = sum_i M_i(x, y)/B and its global mean."""
    per_pixel = mask_set.masks.astype(np.float64).sum(axis=0) / mask_set.frame_count
    return per_pixel, float(per_pixel.mean())


def _noise_rng(mask_set: MaskSet):
    # dedicated stream so mask bits and noise never alias
    return np.random.default_rng(np.random.SeedSequence([mask_set.seed, 0x5C1]))


def modulate(frames, mask_set: MaskSet, noise_sigma=0.0) -> CompressedImage:
    """Y = sum_i X_i * M_i + Z, masks broadcast across channels."""
    frames = np.asarray(frames, dtype=np.float64)
    b, h, w = mask_set.masks.shape
    if frames.shape != (b, h, w, 3):
        raise InvalidParameterError(
            f"expected frames of shape {(b, h, w, 3)}, got {frames.shape}"
        )
    y = np.einsum("bhwc,bhw->hwc", frames, mask_set.masks.astype(np.float64))
    if noise_sigma > 0.0:
        y = y + _noise_rng(mask_set).normal(0.0, noise_sigma, size=y.shape)
    return CompressedImage(y, b)


def modulate_backward(mask_set: MaskSet, upstream):
    """d(loss)/d(frames): gradient for frame i is upstream * M_i."""
    upstream = np.asarray(upstream, dtype=np.float64)
    b, h, w = mask_set.masks.shape
    if upstream.shape != (h, w, 3):
        raise InvalidParameterError("upstream must match the compressed image")
    return upstream[None] * mask_set.masks[..., None].astype(np.float64)


def sci_loss(y_pred, y_obs, lambda_dssim=0.2, frame_count=None):
    """(1-l)*mean|dY| + l*(1 - SSIM(Y_pred/B, Y_obs/B)) and its gradient.

    Accepts CompressedImage values or raw arrays (then frame_count
    defaults to 1). Returns (loss, d loss/d y_pred).
    """
    if isinstance(y_pred, CompressedImage):
        if frame_count is None:
            frame_count = y_pred.frame_count
        y_pred = y_pred.pixels
    if isinstance(y_obs, CompressedImage):
        if frame_count is None:
            frame_count = y_obs.frame_count
        y_obs = y_obs.pixels
    if frame_count is None:
        frame_count = 1
    y_pred = np.asarray(y_pred, dtype=np.float64)
    y_obs = np.asarray(y_obs, dtype=np.float64)
    if y_pred.shape != y_obs.shape:
        raise InvalidParameterError("compressed images must share a shape")
    diff = y_pred - y_obs
    l1 = float(np.mean(np.abs(diff)))
    grad = (1.0 - lambda_dssim) * np.sign(diff) / diff.size
    loss = (1.0 - lambda_dssim) * l1
    if lambda_dssim != 0.0:
        b = float(frame_count)
        s = ssim(y_pred / b, y_obs / b)
        loss += lambda_dssim * (1.0 - s)
        # At the SSIM global maximum the true gradient is exactly zero;
        # skipping the backward there keeps equal-input steps exact no-ops
        # instead of leaking rounding dust into the optimizer.
        if s != 1.0:
            grad += ssim_backward(y_pred / b, y_obs / b, d_out=-lambda_dssim) / b
    return loss, grad


def save_masks(mask_set: MaskSet, path):
    """Bit-exact mask file: SCIM magic, dims, OR, seed, packed bits."""
    b, h, w = mask_set.masks.shape
    header = MASK_MAGIC + struct.pack(
        "<HIIIfQ", MASK_VERSION, b, h, w, mask_set.overlap_ratio, mask_set.seed
    )
    with open(path, "wb") as f:
        f.write(header)
        for i in range(b):
            f.write(np.packbits(mask_set.masks[i].reshape(-1), bitorder="big").tobytes())


def load_masks(path) -> MaskSet:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MASK_MAGIC:
        raise FileFormatError("not a mask file (bad magic)")
    ver, b, h, w, ratio, seed = struct.unpack_from("<HIIIfQ", raw, 4)
    if ver != MASK_VERSION:
        raise FileFormatError(f"unsupported mask file version {ver}")
    per = (h * w + 7) // 8
    off = 4 + struct.calcsize("<HIIIfQ")
    if len(raw) != off + b * per:
        raise FileFormatError("mask file is truncated or oversized")
    masks = np.empty((b, h, w), dtype=np.uint8)
    for i in range(b):
        chunk = np.frombuffer(raw, dtype=np.uint8, count=per, offset=off + i * per)
        masks[i] = np.unpackbits(chunk, count=h * w, bitorder="big").reshape(h, w)
    return MaskSet(masks, float(ratio), int(seed))
