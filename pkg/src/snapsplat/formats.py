"""Binary file formats: raw float images, checkpoints, and previews.

Everything numeric round-trips bit-exactly. The 8-bit previews are
view-only quantizations and are never read back into the pipeline.
"""
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import FileFormatError, GaussianScene, InvalidParameterError
from .field import TransformField
from .optim import AdamState

IMAGE_MAGIC = b"SCIF"
IMAGE_VERSION = 1
CHECKPOINT_MAGIC = b"SCIG"
CHECKPOINT_VERSION = 1


class _Reader:
    """Cursor over a byte string that fails loudly instead of short-reading."""

    def __init__(self, data, label):
        self.data = data
        self.off = 0
        self.label = label

    def take(self, n):
        if self.off + n > len(self.data):
            raise FileFormatError(f"{self.label} is truncated")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count, shape=None):
        arr = np.frombuffer(self.take(8 * count), dtype="<f8").copy()
        return arr.reshape(shape) if shape is not None else arr

    def done(self):
        if self.off != len(self.data):
            raise FileFormatError(f"{self.label} has trailing bytes")


def _read_file(path, label):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FileFormatError(f"cannot read {label} at {path}: {exc}") from exc


# ---------------------------------------------------------------- images


def save_image(path, pixels):
    """Raw float image: magic, version, dims, then little-endian f32 data."""
    arr = np.asarray(pixels)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise InvalidParameterError("image must have shape (H, W) or (H, W, C)")
    h, w, c = arr.shape
    with open(path, "wb") as f:
        f.write(IMAGE_MAGIC + struct.pack("<HIII", IMAGE_VERSION, h, w, c))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_image(path):
    raw = _read_file(path, "image")
    r = _Reader(raw, f"image {path}")
    if r.take(4) != IMAGE_MAGIC:
        raise FileFormatError(f"{path} is not a raw float image (bad magic)")
    ver, h, w, c = r.unpack("<HIII")
    if ver != IMAGE_VERSION:
        raise FileFormatError(f"unsupported image version {ver}")
    payload = r.take(4 * h * w * c)
    r.done()
    return (
        np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(h, w, c)
    )


def save_preview(path, image, scale=1.0):
    """Lossless 8-bit raster preview, clamped to [0, 1] after scaling."""
    arr = np.asarray(image, dtype=np.float64) / float(scale)
    q = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    if q.ndim == 3 and q.shape[2] == 1:
        q = q[:, :, 0]
    if q.ndim == 3 and q.shape[2] != 3:
        raise InvalidParameterError("previews support 1 or 3 channels")
    Image.fromarray(q).save(path)


def save_frames(directory, frames):
    """One raw float image per frame: frame_000.scif, frame_001.scif, ..."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(np.asarray(frames)):
        p = directory / f"frame_{i:03d}.scif"
        save_image(p, frame)
        paths.append(p)
    return paths


def load_frames(directory):
    directory = Path(directory)
    paths = sorted(directory.glob("frame_*.scif"))
    if not paths:
        raise FileFormatError(f"no frame_*.scif files in {directory}")
    frames = [load_image(p) for p in paths]
    if any(f.shape != frames[0].shape for f in frames):
        raise FileFormatError(f"frames in {directory} disagree on shape")
    return np.stack(frames)


# ----------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    """Full optimization snapshot; enough to resume or to render."""

    scene: GaussianScene
    field: TransformField
    scene_state: AdamState
    field_state: AdamState
    iteration: int
    config_text: str


def _pack_str(text):
    data = text.encode("utf-8")
    return struct.pack("<I", len(data)) + data


def _read_str(r):
    (n,) = r.unpack("<I")
    return r.take(n).decode("utf-8")


def _pack_scene(scene):
    n = len(scene)
    coeffs = (scene.sh_degree + 1) ** 2
    per = np.concatenate(
        [
            scene.mu,
            scene.rot,
            scene.log_scale,
            np.atleast_1d(scene.opacity_logit)[:, None],
            scene.sh.reshape(n, 3 * coeffs),
        ],
        axis=1,
    )
    return (
        struct.pack("<QI", n, scene.sh_degree)
        + np.asarray(scene.background, dtype="<f8").tobytes()
        + np.ascontiguousarray(per, dtype="<f8").tobytes()
    )


def _read_scene(r):
    n, degree = r.unpack("<QI")
    background = r.floats(3)
    coeffs = (degree + 1) ** 2
    per = r.floats(n * (11 + 3 * coeffs), (n, 11 + 3 * coeffs))
    return GaussianScene(
        per[:, 0:3],
        per[:, 3:7],
        per[:, 7:10],
        per[:, 10],
        per[:, 11:].reshape(n, coeffs, 3),
        sh_degree=degree,
        background=background,
    )


def _pack_field(field):
    skip = -1 if field.skip_at is None else field.skip_at
    out = [
        struct.pack(
            "<IIIiB",
            field.embed_levels,
            field.depth,
            field.width,
            skip,
            int(field.detach_base_positions),
        ),
        np.asarray(field.bounds_min, dtype="<f8").tobytes(),
        np.asarray(field.bounds_max, dtype="<f8").tobytes(),
        struct.pack("<I", len(field.weights)),
    ]
    for W, b in zip(field.weights, field.biases):
        out.append(struct.pack("<II", W.shape[0], W.shape[1]))
        out.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(out)


def _read_field(r):
    embed_levels, depth, width, skip, detach = r.unpack("<IIIiB")
    bounds_min = r.floats(3)
    bounds_max = r.floats(3)
    (n_layers,) = r.unpack("<I")
    weights, biases = [], []
    for _ in range(n_layers):
        dout, din = r.unpack("<II")
        weights.append(r.floats(dout * din, (dout, din)))
        biases.append(r.floats(dout))
    return TransformField(
        embed_levels=embed_levels,
        depth=depth,
        width=width,
        skip_at=None if skip == -1 else skip,
        weights=weights,
        biases=biases,
        bounds_min=bounds_min,
        bounds_max=bounds_max,
        detach_base_positions=bool(detach),
    )


def _pack_adam(state):
    out = [
        struct.pack("<ddd", state.beta1, state.beta2, state.eps),
        struct.pack("<I", len(state.lrs)),
    ]
    for key in sorted(state.lrs):
        m = state.exp_avg[key]
        out.append(_pack_str(key))
        out.append(struct.pack("<dQ", state.lrs[key], state.steps[key]))
        out.append(struct.pack("<B", m.ndim))
        out.append(struct.pack(f"<{m.ndim}I", *m.shape))
        out.append(np.ascontiguousarray(m, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(state.exp_avg_sq[key], dtype="<f8").tobytes())
    return b"".join(out)


def _read_adam(r):
    beta1, beta2, eps = r.unpack("<ddd")
    (n,) = r.unpack("<I")
    state = AdamState(lrs={}, beta1=beta1, beta2=beta2, eps=eps)
    for _ in range(n):
        key = _read_str(r)
        lr, step = r.unpack("<dQ")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        state.lrs[key] = lr
        state.steps[key] = step
        state.exp_avg[key] = r.floats(count, shape)
        state.exp_avg_sq[key] = r.floats(count, shape)
    return state


def save_checkpoint(path, ckpt: Checkpoint):
    blob = b"".join(
        [
            CHECKPOINT_MAGIC,
            struct.pack("<H", CHECKPOINT_VERSION),
            _pack_scene(ckpt.scene),
            _pack_field(ckpt.field),
            _pack_adam(ckpt.scene_state),
            _pack_adam(ckpt.field_state),
            struct.pack("<Q", ckpt.iteration),
            _pack_str(ckpt.config_text),
        ]
    )
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> Checkpoint:
    raw = _read_file(path, "checkpoint")
    r = _Reader(raw, f"checkpoint {path}")
    if r.take(4) != CHECKPOINT_MAGIC:
        raise FileFormatError(f"{path} is not a checkpoint (bad magic)")
    (ver,) = r.unpack("<H")
    if ver != CHECKPOINT_VERSION:
        raise FileFormatError(f"unsupported checkpoint version {ver}")
    scene = _read_scene(r)
    field = _read_field(r)
    scene_state = _read_adam(r)
    field_state = _read_adam(r)
    (iteration,) = r.unpack("<Q")
    config_text = _read_str(r)
    r.done()
    return Checkpoint(scene, field, scene_state, field_state, iteration, config_text)
