"""Camera-pose-aware transformation network.

An MLP maps (embedded Gaussian position, embedded pose stamp) to per-stamp
increments (delta_mu, delta_rot): positions are normalized into [-1, 1]^3
by a bounding box fixed at initialization, embedded with the sinusoidal
scheme, concatenated with the embedded stamp, and pushed through ReLU
hidden layers with one skip connection. The output layer starts at exactly
zero so the transform is the identity at initialization.

The backward pass is exact reverse mode through every stage, including
both routes by which a base position influences the output: the direct
mu + delta_mu addition and the embedding fed to the network.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .core import GaussianScene, InvalidParameterError, _unit_quaternion


@dataclass(frozen=True)
class PoseStamp:
    """Normalized time stamp of one latent frame within a burst of count."""

    index: int
    count: int

    def __post_init__(self):
        if self.count < 1 or not 0 <= self.index < self.count:
            raise InvalidParameterError("stamp index must lie in [0, count)")

    @property
    def t(self) -> float:
        return self.index / (self.count - 1) if self.count > 1 else 0.0


def embed(x, levels):
    """Sinusoidal features (sin(2^k pi x), cos(2^k pi x)), k = 0..levels-1.

    Works on scalars or trailing-dimension vectors; each input dimension
    contributes a k-major (sin, cos) block of length 2*levels.
    """
    if levels < 1:
        raise InvalidParameterError("embedding needs at least one level")
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    if scalar:
        x = x.reshape(1)
    freq = (2.0 ** np.arange(levels)) * np.pi
    ang = x[..., None] * freq  # (..., dims, levels)
    out = np.stack([np.sin(ang), np.cos(ang)], axis=-1)  # (..., dims, levels, 2)
    out = out.reshape(x.shape[:-1] + (x.shape[-1] * 2 * levels,))
    return out


def embed_backward(x, levels, d_out):
    """d(loss)/dx given d(loss)/d(embed(x))."""
    x = np.asarray(x, dtype=np.float64)
    freq = (2.0 ** np.arange(levels)) * np.pi
    ang = x[..., None] * freq
    d = d_out.reshape(x.shape + (levels, 2))
    return np.sum(freq * (d[..., 0] * np.cos(ang) - d[..., 1] * np.sin(ang)), axis=-1)


@dataclass
class TransformField:
    """MLP weights plus the fixed input-normalization constants."""

    embed_levels: int
    depth: int
    width: int
    skip_at: int | None
    weights: list  # per layer: weight (out, in)
    biases: list  # per layer: bias (out,)
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    detach_base_positions: bool = False

    def __post_init__(self):
        self.bounds_min = np.asarray(self.bounds_min, dtype=np.float64).reshape(3)
        self.bounds_max = np.asarray(self.bounds_max, dtype=np.float64).reshape(3)
        if np.any(self.bounds_max <= self.bounds_min):
            raise InvalidParameterError("field bounds must have positive extent")
        dims = self.layer_dims()
        if len(self.weights) != len(dims) or len(self.biases) != len(dims):
            raise InvalidParameterError("field has the wrong number of layers")
        for W, b, (din, dout) in zip(self.weights, self.biases, dims):
            if W.shape != (dout, din) or b.shape != (dout,):
                raise InvalidParameterError("field layer dimensions do not chain")

    @property
    def input_dim(self):
        return 8 * self.embed_levels  # 3*2L for mu, 2L for the stamp

    def layer_dims(self):
        """(in, out) for every layer including the final linear one."""
        if self.depth < 1:
            raise InvalidParameterError("depth must be >= 1")
        if self.skip_at is not None and not 1 <= self.skip_at < self.depth:
            raise InvalidParameterError("skip_at must name a hidden layer > 0")
        dims = []
        for i in range(self.depth):
            din = self.input_dim if i == 0 else self.width
            if i == self.skip_at:
                din += self.input_dim
            dims.append((din, self.width))
        dims.append((self.width, 7))
        return dims

    @classmethod
    def create(
        cls,
        bounds_min,
        bounds_max,
        embed_levels=6,
        depth=8,
        width=512,
        skip_at=-1,
        detach_base_positions=False,
        rng=None,
    ):
        """He-initialized hidden layers, exactly-zero output layer."""
        if rng is None:
            rng = np.random.default_rng(0)
        if skip_at == -1:
            skip_at = depth // 2 if depth >= 2 else None
        proto = cls.__new__(cls)
        proto.embed_levels = embed_levels
        proto.depth = depth
        proto.width = width
        proto.skip_at = skip_at
        dims = proto.layer_dims()
        weights, biases = [], []
        for i, (din, dout) in enumerate(dims):
            if i == len(dims) - 1:
                weights.append(np.zeros((dout, din)))
            else:
                weights.append(rng.normal(0.0, np.sqrt(2.0 / din), size=(dout, din)))
            biases.append(np.zeros(dout))
        return cls(
            embed_levels=embed_levels,
            depth=depth,
            width=width,
            skip_at=skip_at,
            weights=weights,
            biases=biases,
            bounds_min=bounds_min,
            bounds_max=bounds_max,
            detach_base_positions=detach_base_positions,
        )

    def normalize_positions(self, mu):
        center = 0.5 * (self.bounds_min + self.bounds_max)
        half = 0.5 * (self.bounds_max - self.bounds_min)
        return (mu - center) / half, half

    def parameters(self):
        """Flat list of parameter arrays, weights then bias per layer."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.append(W)
            out.append(b)
        return out


@dataclass
class TransformedScene:
    """Per-stamp view of a scene: positions and rotations overridden.

    rot_sum holds rot + delta_rot before normalization; rendering
    normalizes exactly once inside the covariance assembly, which makes a
    zero-initialized field reproduce the base scene bit for bit.
    """

    base: GaussianScene
    stamp: PoseStamp
    mu: np.ndarray  # mu + delta_mu
    rot_sum: np.ndarray  # rot + delta_rot, unnormalized
    delta_mu: np.ndarray
    delta_rot: np.ndarray
    _ctx: dict | None = dc_field(default=None, repr=False)

    @property
    def rot_prime(self):
        """normalize(rot + delta_rot); unit-norm within 1e-12."""
        return _unit_quaternion(self.rot_sum)

    def to_scene(self) -> GaussianScene:
        return GaussianScene(
            self.mu,
            self.rot_sum,
            self.base.log_scale,
            self.base.opacity_logit,
            self.base.sh,
            self.base.sh_degree,
            self.base.background,
        )


@dataclass
class FieldGradients:
    d_weights: list  # per layer (same shapes as field.weights)
    d_biases: list
    d_mu: np.ndarray  # gradient on base positions
    d_rot: np.ndarray  # gradient on base rotations


def _mlp_forward(field: TransformField, x0):
    """Returns (output, ctx) with everything backward needs."""
    h = x0
    pre = []
    inputs = []
    for i in range(field.depth):
        inp = np.concatenate([h, x0], axis=1) if i == field.skip_at else h
        inputs.append(inp)
        z = inp @ field.weights[i].T + field.biases[i]
        pre.append(z)
        h = np.maximum(z, 0.0)
    inputs.append(h)
    out = h @ field.weights[-1].T + field.biases[-1]
    return out, {"inputs": inputs, "pre": pre}


def field_forward(field: TransformField, scene: GaussianScene, stamp: PoseStamp):
    """Apply the per-stamp transform: mu' = mu + dmu, rot' = norm(rot + dr)."""
    mu_n, half = field.normalize_positions(scene.mu)
    e_mu = embed(mu_n, field.embed_levels)
    e_t = embed(np.float64(stamp.t), field.embed_levels)
    x0 = np.concatenate(
        [e_mu, np.broadcast_to(e_t, (len(scene), e_t.shape[-1]))], axis=1
    )
    out, ctx = _mlp_forward(field, x0)
    delta_mu = out[:, :3]
    delta_rot = out[:, 3:]
    rot_sum = scene.rot + delta_rot
    norms = np.linalg.norm(rot_sum, axis=1)
    if np.any(norms == 0.0):
        raise InvalidParameterError("rot + delta_rot hit zero norm; cannot normalize")
    ctx.update({"x0": x0, "mu_n": mu_n, "half": half})
    return TransformedScene(
        base=scene,
        stamp=stamp,
        mu=scene.mu + delta_mu,
        rot_sum=rot_sum,
        delta_mu=delta_mu,
        delta_rot=delta_rot,
        _ctx=ctx,
    )


def _normalize_backward(q, d_qhat):
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    qh = q / n
    return (d_qhat - qh * np.sum(qh * d_qhat, axis=-1, keepdims=True)) / n


def field_backward(
    field: TransformField,
    scene: GaussianScene,
    stamp: PoseStamp,
    d_mu_prime,
    d_rot_prime,
    rot_is_normalized=True,
    transformed: TransformedScene | None = None,
) -> FieldGradients:
    """Exact adjoint of field_forward.

    d_rot_prime is taken with respect to the normalized rot' when
    rot_is_normalized is set (the contract default); pass False when the
    caller differentiates through rot_sum and performs the quaternion
    normalization itself (the covariance assembly does).
    """
    d_mu_prime = np.asarray(d_mu_prime, dtype=np.float64)
    d_rot_prime = np.asarray(d_rot_prime, dtype=np.float64)
    if d_mu_prime.shape != scene.mu.shape or d_rot_prime.shape != scene.rot.shape:
        raise InvalidParameterError("upstream gradient shapes must match the scene")
    if transformed is not None and transformed._ctx is not None:
        ts = transformed
    else:
        ts = field_forward(field, scene, stamp)
    ctx = ts._ctx

    if rot_is_normalized:
        d_rot_sum = _normalize_backward(ts.rot_sum, d_rot_prime)
    else:
        d_rot_sum = d_rot_prime
    d_out = np.concatenate([d_mu_prime, d_rot_sum], axis=1)

    d_weights = [None] * len(field.weights)
    d_biases = [None] * len(field.biases)
    h_last = ctx["inputs"][-1]
    d_weights[-1] = d_out.T @ h_last
    d_biases[-1] = d_out.sum(axis=0)
    d_h = d_out @ field.weights[-1]
    d_x0 = np.zeros_like(ctx["x0"])
    for i in range(field.depth - 1, -1, -1):
        d_z = d_h * (ctx["pre"][i] > 0.0)
        d_weights[i] = d_z.T @ ctx["inputs"][i]
        d_biases[i] = d_z.sum(axis=0)
        d_inp = d_z @ field.weights[i]
        if i == field.skip_at:  # input was concat(h, x0)
            d_h = d_inp[:, : field.width]
            d_x0 += d_inp[:, field.width :]
        else:
            d_h = d_inp
        if i == 0:
            d_x0 += d_h
    d_e_mu = d_x0[:, : 6 * field.embed_levels]
    d_mu = d_mu_prime.copy()
    if not field.detach_base_positions:
        d_mu_n = embed_backward(ctx["mu_n"], field.embed_levels, d_e_mu)
        d_mu += d_mu_n / ctx["half"]
    return FieldGradients(
        d_weights=d_weights, d_biases=d_biases, d_mu=d_mu, d_rot=d_rot_sum.copy()
    )
