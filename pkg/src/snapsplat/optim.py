"""Joint optimization of the Gaussian scene and the stamp transform field.

Two independent Adam optimizers (one over the per-Gaussian parameter
arrays, one over the field weights) drive the full chain

    field -> low-pass filter -> render per stamp -> modulate -> loss

with hand-written adjoints all the way back, plus adaptive density
control (clone / split / prune) on the base Gaussians.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace as dc_replace

import numpy as np
from scipy.spatial import cKDTree

from .config import TrainConfig
from .core import (
    GaussianScene,
    InvalidParameterError,
    _unit_quaternion,
    covariance_backward,
    covariance_from_params,
    eval_sh,
    eval_sh_backward,
    logit,
    rotation_matrix,
    sigmoid,
)
from .field import PoseStamp, TransformField, field_backward, field_forward
from .lowpass import apply_filter, apply_filter_backward, build_table
from .metrics import psnr
from .raster import _view_dirs, render_arrays, render_arrays_backward
from .sci import CompressedImage, MaskSet, modulate, modulate_backward, sci_loss

SPLIT_SCALE_FACTOR = 1.6
OPACITY_RESET_CEILING = 0.01

SCENE_GROUPS = ("mu", "rot", "log_scale", "opacity_logit", "sh")


@dataclass
class AdamState:
    """Adam moments for a named group of parameter arrays.

    beta1/beta2/eps follow the splatting convention (eps well below the
    usual 1e-8 so tiny second moments do not stall updates).
    """

    lrs: dict
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    exp_avg: dict = dc_field(default_factory=dict)
    exp_avg_sq: dict = dc_field(default_factory=dict)
    steps: dict = dc_field(default_factory=dict)

    @classmethod
    def create(cls, params, lr):
        """lr: one float for every key, or a dict keyed like params."""
        if isinstance(lr, dict):
            lrs = {k: float(lr[k]) for k in params}
        else:
            lrs = {k: float(lr) for k in params}
        state = cls(lrs=lrs)
        for key, p in params.items():
            state.exp_avg[key] = np.zeros_like(p)
            state.exp_avg_sq[key] = np.zeros_like(p)
            state.steps[key] = 0
        return state

    def remap(self, keep, n_new):
        """Row bookkeeping after densify/prune: surviving rows keep their
        moments, the n_new appended rows start at zero."""
        keep = np.asarray(keep, dtype=np.int64)
        for moments in (self.exp_avg, self.exp_avg_sq):
            for key, m in moments.items():
                pad = np.zeros((n_new,) + m.shape[1:])
                moments[key] = np.concatenate([m[keep], pad], axis=0)

    def zero_moments(self, key):
        self.exp_avg[key] = np.zeros_like(self.exp_avg[key])
        self.exp_avg_sq[key] = np.zeros_like(self.exp_avg_sq[key])


def adam_step(params, grads, state: AdamState, lr_scale=None):
    """One bias-corrected Adam update per named array; returns new params.

    Moments mutate in place. lr_scale optionally multiplies the stored
    learning rate per key (used for the position decay schedule).
    """
    out = {}
    for key, p in params.items():
        if key not in grads:
            raise InvalidParameterError(f"missing gradient for parameter {key!r}")
        g = np.asarray(grads[key], dtype=np.float64)
        if g.shape != p.shape:
            raise InvalidParameterError(
                f"gradient shape {g.shape} does not match parameter "
                f"{key!r} of shape {p.shape}"
            )
        state.steps[key] += 1
        t = state.steps[key]
        m = state.exp_avg[key]
        v = state.exp_avg_sq[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        bc1 = 1.0 - state.beta1**t
        bc2 = 1.0 - state.beta2**t
        lr = state.lrs[key]
        if lr_scale is not None:
            lr = lr * lr_scale.get(key, 1.0)
        denom = np.sqrt(v) / np.sqrt(bc2) + state.eps
        out[key] = p - (lr / bc1) * (m / denom)
    return out


@dataclass
class DensifyStats:
    """Per-Gaussian densification evidence, summed over stamps."""

    grad_norm_sum: np.ndarray  # accumulated ||dL/d mean2d||
    count: np.ndarray  # number of renders the Gaussian was visible in
    max_radius: np.ndarray  # largest observed screen radius, pixels

    @classmethod
    def zeros(cls, n):
        return cls(
            grad_norm_sum=np.zeros(n),
            count=np.zeros(n, dtype=np.int64),
            max_radius=np.zeros(n),
        )

    def __len__(self):
        return self.grad_norm_sum.shape[0]

    def accumulate(self, grad_norm, visible, radius):
        self.grad_norm_sum[visible] += grad_norm[visible]
        self.count[visible] += 1
        self.max_radius = np.maximum(self.max_radius, np.where(visible, radius, 0.0))

    def mean_grad(self):
        return self.grad_norm_sum / np.maximum(self.count, 1)


def init_scene(num_points, bounds_min, bounds_max, seed, background=(0.0, 0.0, 0.0)):
    """Uniform random cloud: identity rotations, isotropic scales from the
    mean nearest-neighbor distance (0.1 for a single point), opacity 0.1,
    mid-gray degree-0 color."""
    if num_points < 1:
        raise InvalidParameterError("num_points must be >= 1")
    lo = np.asarray(bounds_min, dtype=np.float64)
    hi = np.asarray(bounds_max, dtype=np.float64)
    rng = np.random.default_rng(seed)
    mu = rng.uniform(lo, hi, size=(num_points, 3))
    if num_points == 1:
        sigma0 = 0.1
    else:
        dist, _ = cKDTree(mu).query(mu, k=2)
        sigma0 = max(float(np.mean(dist[:, 1])), 1e-6)
    rot = np.zeros((num_points, 4))
    rot[:, 0] = 1.0
    return GaussianScene(
        mu=mu,
        rot=rot,
        log_scale=np.full((num_points, 3), np.log(sigma0)),
        opacity_logit=np.full(num_points, logit(0.1)),
        sh=np.zeros((num_points, 1, 3)),
        sh_degree=0,
        background=np.asarray(background, dtype=np.float64),
    )


def scene_params(scene: GaussianScene) -> dict:
    return {
        "mu": scene.mu,
        "rot": scene.rot,
        "log_scale": scene.log_scale,
        "opacity_logit": scene.opacity_logit,
        "sh": scene.sh,
    }


def scene_with_params(scene: GaussianScene, params: dict) -> GaussianScene:
    return GaussianScene(
        params["mu"],
        params["rot"],
        params["log_scale"],
        params["opacity_logit"],
        params["sh"],
        scene.sh_degree,
        scene.background,
    )


def scene_lrs(cfg: TrainConfig) -> dict:
    o = cfg.optim
    return {
        "mu": o.lr_position,
        "rot": o.lr_rotation,
        "log_scale": o.lr_scale,
        "opacity_logit": o.lr_opacity,
        "sh": o.lr_sh,
    }


def field_params(field: TransformField) -> dict:
    out = {}
    for i, (w, b) in enumerate(zip(field.weights, field.biases)):
        out[f"w{i}"] = w
        out[f"b{i}"] = b
    return out


def field_with_params(field: TransformField, params: dict) -> TransformField:
    n = len(field.weights)
    return dc_replace(
        field,
        weights=[params[f"w{i}"] for i in range(n)],
        biases=[params[f"b{i}"] for i in range(n)],
    )


def compute_nu_hat(scene, field, frame_count, cam):
    """Per-Gaussian maximal sampling frequency over all stamp transforms."""
    mus = np.stack(
        [
            field_forward(field, scene, PoseStamp(s, frame_count)).mu
            for s in range(frame_count)
        ]
    )
    return build_table(mus, cam).max_freq


def forward_backward(scene, field, mask_set: MaskSet, y_obs, cam, cfg, nu_hat=None):
    """Loss and all gradients for one step.

    Returns (loss, frames, scene_grads, field_grads, stamp_info); the
    stamp_info rows are (visible, radius, grad_norm) per stamp for the
    densification statistics. Passing nu_hat=None renders unfiltered even
    when the filter is enabled (the caller owns the recompute schedule).
    """
    B = mask_set.frame_count
    sigma = np.atleast_1d(sigmoid(scene.opacity_logit))
    use_filter = cfg.filter.enabled and nu_hat is not None
    frames = np.empty((B, cam.height, cam.width, 3))
    per_stamp = []
    for s in range(B):
        ts = field_forward(field, scene, PoseStamp(s, B))
        cov = covariance_from_params(ts.rot_sum, scene.log_scale)
        if use_filter:
            cov_r, sigma_r = apply_filter(cov, sigma, nu_hat, cfg.filter.gamma)
        else:
            cov_r, sigma_r = cov, sigma
        dirs = _view_dirs(ts.mu, cam)
        colors = eval_sh(scene.sh, dirs, scene.sh_degree)
        img, _, ctx = render_arrays(
            ts.mu, cov_r, sigma_r, colors, scene.background, cam
        )
        frames[s] = img
        per_stamp.append((ts, cov, cov_r, sigma_r, dirs, colors, ctx))

    y_pred = modulate(frames, mask_set, cfg.sci.noise_sigma)
    loss, d_y = sci_loss(y_pred, y_obs, cfg.loss.lambda_dssim, frame_count=B)
    d_frames = modulate_backward(mask_set, d_y)

    sgrads = {k: np.zeros_like(v) for k, v in scene_params(scene).items()}
    d_weights = [np.zeros_like(w) for w in field.weights]
    d_biases = [np.zeros_like(b) for b in field.biases]
    info = []
    for s in range(B):
        ts, cov, cov_r, sigma_r, dirs, colors, ctx = per_stamp[s]
        g = render_arrays_backward(
            ts.mu, cov_r, sigma_r, colors, scene.background, cam, d_frames[s], ctx
        )
        if use_filter:
            d_cov, d_sigma = apply_filter_backward(
                cov, sigma, nu_hat, cfg.filter.gamma, g["d_cov3d"], g["d_sigma"]
            )
        else:
            d_cov, d_sigma = g["d_cov3d"], g["d_sigma"]
        d_rot_sum, d_log_scale = covariance_backward(
            ts.rot_sum, scene.log_scale, d_cov
        )
        fg = field_backward(
            field,
            scene,
            PoseStamp(s, B),
            g["d_mu"],
            d_rot_sum,
            rot_is_normalized=False,
            transformed=ts,
        )
        sgrads["mu"] += fg.d_mu
        sgrads["rot"] += fg.d_rot
        sgrads["log_scale"] += d_log_scale
        sgrads["opacity_logit"] += d_sigma * sigma * (1.0 - sigma)
        sgrads["sh"] += eval_sh_backward(scene.sh, dirs, scene.sh_degree, g["d_colors"])
        for i in range(len(d_weights)):
            d_weights[i] += fg.d_weights[i]
            d_biases[i] += fg.d_biases[i]
        p = ctx["p"]
        info.append(
            (
                p["valid"].copy(),
                np.where(p["valid"], p["radius"], 0.0),
                np.linalg.norm(g["d_mean2d"], axis=1),
            )
        )
    fgrads = {}
    for i in range(len(d_weights)):
        fgrads[f"w{i}"] = d_weights[i]
        fgrads[f"b{i}"] = d_biases[i]
    return loss, frames, sgrads, fgrads, info


def train_step(
    scene,
    field,
    mask_set,
    y_obs,
    cam,
    cfg,
    scene_state: AdamState,
    field_state: AdamState,
    stats: DensifyStats | None = None,
    nu_hat=None,
    lr_scale=None,
):
    """One full optimization step: forward, backward, one Adam update per
    parameter group. Returns (loss, scene, field, frames); stats (when
    given) accumulates densification evidence in place."""
    loss, frames, sgrads, fgrads, info = forward_backward(
        scene, field, mask_set, y_obs, cam, cfg, nu_hat
    )
    if stats is not None:
        for visible, radius, grad_norm in info:
            stats.accumulate(grad_norm, visible, radius)
    new_sp = adam_step(scene_params(scene), sgrads, scene_state, lr_scale)
    new_fp = adam_step(field_params(field), fgrads, field_state)
    return loss, scene_with_params(scene, new_sp), field_with_params(field, new_fp), frames


def densify_and_prune(
    scene,
    stats: DensifyStats,
    state: AdamState,
    rng,
    *,
    grad_threshold=2e-4,
    opacity_prune_threshold=0.005,
    scale_split_threshold=0.02,
    max_gaussians=0,
):
    """Adaptive density control on the base Gaussians.

    High-mean-gradient Gaussians are cloned (small ones, child offset by
    one stddev sample) or split in two (large ones, scales divided by
    SPLIT_SCALE_FACTOR, children sampled inside the parent footprint,
    parent removed); near-transparent ones are pruned. Adam moments are
    remapped in place; returns (scene, fresh stats)."""
    n = len(scene)
    if len(stats) != n:
        raise InvalidParameterError("stats length does not match the scene")
    sigma = np.atleast_1d(sigmoid(scene.opacity_logit))
    prune = sigma < opacity_prune_threshold
    candidate = (stats.count > 0) & (stats.mean_grad() > grad_threshold) & ~prune
    max_scale = np.exp(scene.log_scale).max(axis=1)
    clone = candidate & (max_scale < scale_split_threshold)
    split = candidate & (max_scale >= scale_split_threshold)
    kept = int(np.count_nonzero(~(prune | split)))
    projected = kept + int(clone.sum()) + 2 * int(split.sum())
    if max_gaussians and projected > max_gaussians:
        # growth frozen near the cap; pruning still runs
        clone[:] = False
        split[:] = False

    keep_idx = np.flatnonzero(~(prune | split))
    clone_idx = np.flatnonzero(clone)
    split_idx = np.flatnonzero(split)

    def stddev_samples(idx, count):
        # one draw from each parent's own N(0, Sigma): delta = R (s * eps)
        eps = rng.standard_normal((idx.size * count, 3))
        rep = np.repeat(idx, count)
        R = rotation_matrix(_unit_quaternion(scene.rot[rep]))
        s = np.exp(scene.log_scale[rep])
        return rep, np.einsum("nij,nj->ni", R, s * eps)

    parts = {k: [v[keep_idx]] for k, v in scene_params(scene).items()}
    if clone_idx.size:
        rep, delta = stddev_samples(clone_idx, 1)
        parts["mu"].append(scene.mu[rep] + delta)
        parts["rot"].append(scene.rot[rep])
        parts["log_scale"].append(scene.log_scale[rep])
        parts["opacity_logit"].append(scene.opacity_logit[rep])
        parts["sh"].append(scene.sh[rep])
    if split_idx.size:
        rep, delta = stddev_samples(split_idx, 2)
        parts["mu"].append(scene.mu[rep] + delta)
        parts["rot"].append(scene.rot[rep])
        parts["log_scale"].append(scene.log_scale[rep] - np.log(SPLIT_SCALE_FACTOR))
        parts["opacity_logit"].append(scene.opacity_logit[rep])
        parts["sh"].append(scene.sh[rep])

    new_params = {k: np.concatenate(v, axis=0) for k, v in parts.items()}
    n_new = new_params["mu"].shape[0] - keep_idx.size
    state.remap(keep_idx, n_new)
    new_scene = scene_with_params(scene, new_params)
    return new_scene, DensifyStats.zeros(len(new_scene))


def reset_opacity(scene, state: AdamState):
    """Periodic transparency reset: clamp opacities down to at most
    OPACITY_RESET_CEILING and zero the opacity Adam moments."""
    cap = logit(OPACITY_RESET_CEILING)
    params = scene_params(scene)
    params = {**params, "opacity_logit": np.minimum(scene.opacity_logit, cap)}
    state.zero_moments("opacity_logit")
    return scene_with_params(scene, params)


def render_frames(scene, field, frame_count, cam, cfg):
    """All B recovered frames at the current parameters (filter applied
    exactly as during training)."""
    nu = (
        compute_nu_hat(scene, field, frame_count, cam)
        if cfg.filter.enabled
        else None
    )
    sigma = np.atleast_1d(sigmoid(scene.opacity_logit))
    frames = np.empty((frame_count, cam.height, cam.width, 3))
    for s in range(frame_count):
        ts = field_forward(field, scene, PoseStamp(s, frame_count))
        cov = covariance_from_params(ts.rot_sum, scene.log_scale)
        if nu is not None:
            cov, sig = apply_filter(cov, sigma, nu, cfg.filter.gamma)
        else:
            sig = sigma
        dirs = _view_dirs(ts.mu, cam)
        colors = eval_sh(scene.sh, dirs, scene.sh_degree)
        frames[s], _, _ = render_arrays(
            ts.mu, cov, sig, colors, scene.background, cam
        )
    return frames


@dataclass
class TrainResult:
    scene: GaussianScene
    field: TransformField
    frames: np.ndarray  # (B, H, W, 3) recovered at the final parameters
    metrics: list  # (iteration, loss, mean psnr vs ground truth or nan)
    scene_state: AdamState
    field_state: AdamState


def train(
    y_obs,
    mask_set: MaskSet,
    cam,
    cfg: TrainConfig,
    *,
    scene: GaussianScene | None = None,
    field: TransformField | None = None,
    ground_truth=None,
    checkpoint_cb=None,
    progress_cb=None,
) -> TrainResult:
    """Run the optimization for cfg.optim.iterations steps.

    ground_truth (B,H,W,3), when given, only feeds the PSNR column of the
    metrics log. checkpoint_cb(iteration, scene, field, scene_state,
    field_state) fires every io.checkpoint_every iterations and at the
    end. Deterministic for a fixed config and seed."""
    cfg.validate()
    B = mask_set.frame_count
    if B != cfg.sci.compression_ratio:
        raise InvalidParameterError(
            f"mask set holds {B} frames but config expects "
            f"{cfg.sci.compression_ratio}"
        )
    if isinstance(y_obs, CompressedImage):
        y_obs = y_obs.pixels
    y_obs = np.asarray(y_obs, dtype=np.float64)
    if y_obs.shape != (cam.height, cam.width, 3):
        raise InvalidParameterError("observed image does not match the camera size")

    bounds_min = np.asarray(cfg.scene.bounds_min, dtype=np.float64)
    bounds_max = np.asarray(cfg.scene.bounds_max, dtype=np.float64)
    if scene is None:
        scene = init_scene(cfg.scene.init_points, bounds_min, bounds_max, cfg.seed)
    if field is None:
        field = TransformField.create(
            bounds_min,
            bounds_max,
            embed_levels=cfg.field_.embed_levels,
            depth=cfg.field_.depth,
            width=cfg.field_.width,
            detach_base_positions=cfg.field_.detach_base_positions,
            rng=np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xF1E1D])),
        )
    scene_state = AdamState.create(scene_params(scene), scene_lrs(cfg))
    field_state = AdamState.create(field_params(field), cfg.optim.lr_field)
    stats = DensifyStats.zeros(len(scene))
    densify_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xDE5518]))

    iterations = cfg.optim.iterations
    dstart, dstop = cfg.densify_window()
    interval = cfg.optim.densify_interval
    nu = None
    nu_rows = -1
    metrics = []
    last_cb = None
    for it in range(1, iterations + 1):
        if cfg.filter.enabled and (
            nu is None or len(scene) != nu_rows or (it - 1) % cfg.filter.recompute_interval == 0
        ):
            nu = compute_nu_hat(scene, field, B, cam)
            nu_rows = len(scene)
        decay = cfg.optim.lr_position_final ** (it / iterations)
        loss, scene, field, frames = train_step(
            scene,
            field,
            mask_set,
            y_obs,
            cam,
            cfg,
            scene_state,
            field_state,
            stats,
            nu,
            lr_scale={"mu": decay},
        )
        quality = float("nan")
        if ground_truth is not None:
            quality = float(
                np.mean([psnr(frames[i], ground_truth[i]) for i in range(B)])
            )
        metrics.append((it, float(loss), quality))
        if progress_cb is not None:
            progress_cb(it, float(loss), quality)

        if interval > 0 and dstart <= it <= dstop and it % interval == 0:
            scene, stats = densify_and_prune(
                scene,
                stats,
                scene_state,
                densify_rng,
                grad_threshold=cfg.optim.grad_threshold,
                opacity_prune_threshold=cfg.optim.opacity_prune_threshold,
                scale_split_threshold=cfg.optim.scale_split_threshold,
                max_gaussians=cfg.optim.max_gaussians,
            )
        if (
            cfg.optim.opacity_reset
            and cfg.optim.opacity_reset_interval > 0
            and it % cfg.optim.opacity_reset_interval == 0
            and it < iterations
        ):
            scene = reset_opacity(scene, scene_state)

        if (
            checkpoint_cb is not None
            and cfg.io.checkpoint_every > 0
            and it % cfg.io.checkpoint_every == 0
        ):
            checkpoint_cb(it, scene, field, scene_state, field_state)
            last_cb = it

    if checkpoint_cb is not None and last_cb != iterations:
        checkpoint_cb(iterations, scene, field, scene_state, field_state)
    frames = render_frames(scene, field, B, cam, cfg)
    return TrainResult(
        scene=scene,
        field=field,
        frames=frames,
        metrics=metrics,
        scene_state=scene_state,
        field_state=field_state,
    )
