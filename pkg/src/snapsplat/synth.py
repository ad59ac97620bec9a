"""Procedural reference scenes with known motion.

Ground-truth frame bursts come from reference Gaussian scenes rendered
with the same rasterizer the recovery uses, so synthetic targets are
exactly representable. The camera builder here is the one canonical
source of extrinsics: training reconstructs the identical camera from
the config, which keeps recovery well-posed without a camera file.
"""
import numpy as np

from .core import Camera, GaussianScene, InvalidParameterError, SH_C0, logit

PRESETS = ("static-blobs", "moving-blob", "rotating-bar")

# sub-stream tags so the camera, placement, and training draws never collide
_CAMERA_TAG = 0xCA3E7A
_PLACEMENT_TAG = 0x5CE4E


def make_camera(width, height, focal, distance, jitter, seed) -> Camera:
    """Frozen randomized extrinsics: a look-at pose from `distance` away
    along -z, direction perturbed by a seeded jitter, intrinsics centered."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _CAMERA_TAG]))
    direction = np.array([0.0, 0.0, -1.0])
    direction[:2] += jitter * rng.uniform(-1.0, 1.0, size=2)
    direction /= np.linalg.norm(direction)
    return Camera.look_at(
        eye=distance * direction,
        target=np.zeros(3),
        up=np.array([0.0, 1.0, 0.0]),
        fx=focal,
        fy=focal,
        width=width,
        height=height,
    )


def camera_from_config(cfg) -> Camera:
    return make_camera(
        cfg.image.width,
        cfg.image.height,
        cfg.cam.focal,
        cfg.cam.distance,
        cfg.cam.jitter,
        cfg.seed,
    )


def _sh_for_color(colors):
    # invert the degree-0 decode color = SH_C0 * sh + 0.5
    return (np.asarray(colors, dtype=np.float64) - 0.5)[:, None, :] / SH_C0


def _blob_scene(mu, scales, colors, opacity=0.85, rot=None):
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    n = mu.shape[0]
    if rot is None:
        rot = np.zeros((n, 4))
        rot[:, 0] = 1.0
    return GaussianScene(
        mu,
        rot,
        np.log(np.broadcast_to(np.asarray(scales, dtype=np.float64), (n, 3)).copy()),
        np.full(n, logit(opacity)),
        _sh_for_color(colors),
    )


def _axis_angle_quat(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def intensity_centroid(image):
    """Intensity-weighted mean pixel position (x, y) of an image."""
    image = np.asarray(image, dtype=np.float64)
    weight = image.sum(axis=2) if image.ndim == 3 else image
    total = weight.sum()
    if total <= 0.0:
        raise InvalidParameterError("cannot take the centroid of a dark image")
    ys, xs = np.mgrid[0 : weight.shape[0], 0 : weight.shape[1]]
    return float((xs * weight).sum() / total), float((ys * weight).sum() / total)


def _render(scene, cam):
    from .raster import render

    return render(scene, cam).pixels


def _static_blobs(rng, cam, frame_count):
    n = 6
    mu = np.column_stack(
        [
            rng.uniform(-0.85, 0.85, n),
            rng.uniform(-0.85, 0.85, n),
            rng.uniform(-0.3, 0.3, n),
        ]
    )
    scales = rng.uniform(0.09, 0.2, size=(n, 3))
    colors = rng.uniform(0.25, 1.0, size=(n, 3))
    img = _render(_blob_scene(mu, scales, colors), cam)
    return np.repeat(img[None], frame_count, axis=0), None


def _moving_blob(rng, cam, frame_count):
    color = rng.uniform(0.6, 1.0, size=(1, 3))
    scale = rng.uniform(0.1, 0.14)
    # travel along the camera's right axis: camera-space depth stays
    # constant, so the projected motion is exactly linear in pixels
    right_world = cam.R[0]
    down_world = cam.R[1]
    travel_px = 0.35 * cam.width
    # solve the projection for a start point whose pixel path stays
    # centered, otherwise edge clipping skews the measured centroids
    base = rng.uniform(-0.05, 0.05, 3)
    x_cam, y_cam, depth = cam.world_to_cam(base)
    u_target = cam.cx - 0.5 * travel_px
    v_target = cam.cy + rng.uniform(-0.08, 0.08) * cam.height
    start = (
        base
        + ((u_target - cam.cx) * depth / cam.fx - x_cam) * right_world
        + ((v_target - cam.cy) * depth / cam.fy - y_cam) * down_world
    )
    step = travel_px * depth / (cam.fx * max(frame_count - 1, 1))
    frames = np.empty((frame_count, cam.height, cam.width, 3))
    for i in range(frame_count):
        scene = _blob_scene(start + i * step * right_world, scale, color, opacity=0.95)
        frames[i] = _render(scene, cam)
    return frames, {
        "kind": "linear",
        "pixels_per_frame": [float(cam.fx * step / depth), 0.0],
    }


def _rotating_bar(rng, cam, frame_count):
    color = rng.uniform(0.6, 1.0, size=(1, 3))
    center = rng.uniform(-0.05, 0.05, 3)
    radians_per_frame = 0.8 * np.pi / max(frame_count, 1)
    axis = cam.R[2]  # spin about the optical axis so the bar stays face-on
    frames = np.empty((frame_count, cam.height, cam.width, 3))
    for i in range(frame_count):
        rot = _axis_angle_quat(axis, i * radians_per_frame)[None]
        scene = _blob_scene(
            center, np.array([0.55, 0.06, 0.06]), color, opacity=0.95, rot=rot
        )
        frames[i] = _render(scene, cam)
    return frames, {"kind": "rotation", "radians_per_frame": float(radians_per_frame)}


def synthesize_dataset(
    preset,
    seed,
    frame_count,
    width,
    height,
    focal=70.0,
    distance=4.0,
    jitter=0.05,
):
    """Render a ground-truth burst for one of the named presets.

    Returns (frames (B,H,W,3) float64, camera, motion) where motion
    describes the per-frame displacement (None for static scenes).
    Deterministic: the same arguments always give the same burst.
    """
    if preset not in PRESETS:
        raise InvalidParameterError(
            f"unknown preset: {preset!r} (choose from {', '.join(PRESETS)})"
        )
    if frame_count < 1:
        raise InvalidParameterError("frame_count must be >= 1")
    cam = make_camera(width, height, focal, distance, jitter, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, _PLACEMENT_TAG]))
    builder = {
        "static-blobs": _static_blobs,
        "moving-blob": _moving_blob,
        "rotating-bar": _rotating_bar,
    }[preset]
    frames, motion = builder(rng, cam, frame_count)
    return frames, cam, motion
