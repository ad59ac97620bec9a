"""Domain types and exact geometric kernels for 3D Gaussian scenes.

Conventions used throughout the package:
  * quaternions are scalar-first (w, x, y, z) and stored unnormalized;
    they are normalized on use,
  * scales are stored in log space (scale = exp(log_scale) > 0),
  * opacity is stored as a logit (opacity = sigmoid(logit) in (0, 1)),
  * all numerics are 64-bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InvalidParameterError(ValueError):
    """An operation received parameters outside its contract."""


class FileFormatError(InvalidParameterError):
    """Missing, malformed, or truncated file content."""


# Real spherical-harmonic constants, degrees 0..3 (splatting convention).
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

MAX_SH_DEGREE = 3


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def normalize_quaternion(q):
    """Unit quaternion with a canonical sign (leading component >= 0).

    Raises InvalidParameterError on zero norm. The sign canonicalization
    makes test comparisons deterministic; rotation matrices are invariant
    under q -> -q so rendering never depends on it.
    """
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise InvalidParameterError("zero-norm quaternion cannot be normalized")
    out = q / n
    flip = out[..., :1] < 0.0
    return np.where(flip, -out, out)


def _unit_quaternion(q):
    # Plain q/|q| without sign canonicalization; smooth away from the origin,
    # which the backward pass relies on.
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise InvalidParameterError("zero-norm quaternion cannot be normalized")
    return q / n


def rotation_matrix(q_unit):
    """Rotation matrices (..., 3, 3) from unit quaternions (..., 4)."""
    q = np.asarray(q_unit, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[..., 0, 1] = 2.0 * (x * y - w * z)
    R[..., 0, 2] = 2.0 * (x * z + w * y)
    R[..., 1, 0] = 2.0 * (x * y + w * z)
    R[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[..., 1, 2] = 2.0 * (y * z - w * x)
    R[..., 2, 0] = 2.0 * (x * z - w * y)
    R[..., 2, 1] = 2.0 * (y * z + w * x)
    R[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


def covariance_from_params(rot, log_scale):
    """3D covariance Sigma = R S S^T R^T from a quaternion and log scales.

    R is the rotation of the normalized quaternion, S = diag(exp(log_scale)).
    The result is symmetric positive definite for finite inputs.
    """
    rot = np.asarray(rot, dtype=np.float64)
    log_scale = np.asarray(log_scale, dtype=np.float64)
    if rot.shape[-1] != 4 or log_scale.shape[-1] != 3:
        raise InvalidParameterError("expected quaternion (..,4) and log_scale (..,3)")
    R = rotation_matrix(_unit_quaternion(rot))
    s2 = np.exp(2.0 * log_scale)
    return np.einsum("...ik,...k,...jk->...ij", R, s2, R)


def covariance_backward(rot, log_scale, d_cov):
    """Adjoint of covariance_from_params.

    d_cov is the full-matrix gradient (..., 3, 3); it does not need to be
    symmetric. Returns (d_rot, d_log_scale) with gradients flowing through
    the quaternion normalization and the exp activation.
    """
    rot = np.asarray(rot, dtype=np.float64)
    log_scale = np.asarray(log_scale, dtype=np.float64)
    d_cov = np.asarray(d_cov, dtype=np.float64)
    n = np.linalg.norm(rot, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise InvalidParameterError("zero-norm quaternion cannot be normalized")
    qh = rot / n
    R = rotation_matrix(qh)
    s = np.exp(log_scale)
    L = R * s[..., None, :]
    # Sigma = L L^T  =>  dL = (G + G^T) L
    G = d_cov + np.swapaxes(d_cov, -1, -2)
    dL = np.einsum("...ij,...jk->...ik", G, L)
    d_s = np.einsum("...ik,...ik->...k", R, dL)
    d_log_scale = d_s * s
    dR = dL * s[..., None, :]

    w, x, y, z = qh[..., 0], qh[..., 1], qh[..., 2], qh[..., 3]
    zero = np.zeros_like(w)
    # dR/dq entries for the scalar-first quaternion rotation matrix.
    dRdw = 2.0 * np.stack(
        [zero, -z, y, z, zero, -x, -y, x, zero], axis=-1
    ).reshape(qh.shape[:-1] + (3, 3))
    dRdx = 2.0 * np.stack(
        [zero, y, z, y, -2.0 * x, -w, z, w, -2.0 * x], axis=-1
    ).reshape(qh.shape[:-1] + (3, 3))
    dRdy = 2.0 * np.stack(
        [-2.0 * y, x, w, x, zero, z, -w, z, -2.0 * y], axis=-1
    ).reshape(qh.shape[:-1] + (3, 3))
    dRdz = 2.0 * np.stack(
        [-2.0 * z, -w, x, w, -2.0 * z, y, x, y, zero], axis=-1
    ).reshape(qh.shape[:-1] + (3, 3))
    d_qh = np.stack(
        [
            np.einsum("...ij,...ij->...", dR, dRdw),
            np.einsum("...ij,...ij->...", dR, dRdx),
            np.einsum("...ij,...ij->...", dR, dRdy),
            np.einsum("...ij,...ij->...", dR, dRdz),
        ],
        axis=-1,
    )
    # Through q/|q|: (I - qh qh^T) / |q|
    d_rot = (d_qh - qh * np.sum(qh * d_qh, axis=-1, keepdims=True)) / n
    return d_rot, d_log_scale


def sh_basis(view_dir, degree):
    """Real SH basis values, shape (..., (degree+1)^2), splatting convention."""
    if not 0 <= degree <= MAX_SH_DEGREE:
        raise InvalidParameterError(f"sh degree must be in [0, {MAX_SH_DEGREE}]")
    d = np.asarray(view_dir, dtype=np.float64)
    out = np.empty(d.shape[:-1] + ((degree + 1) ** 2,), dtype=np.float64)
    out[..., 0] = SH_C0
    if degree >= 1:
        x, y, z = d[..., 0], d[..., 1], d[..., 2]
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = SH_C2[0] * x * y
        out[..., 5] = SH_C2[1] * y * z
        out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * x * z
        out[..., 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        out[..., 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = SH_C3[1] * x * y * z
        out[..., 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def eval_sh(sh, view_dir, degree):
    """RGB color from SH coefficients at a unit view direction.

    Follows the splatting color convention: basis-weighted sum per channel,
    offset by +0.5, clamped at zero.
    """
    sh = np.asarray(sh, dtype=np.float64)
    view_dir = np.asarray(view_dir, dtype=np.float64)
    n_coeff = (degree + 1) ** 2
    if sh.shape[-2] != n_coeff:
        raise InvalidParameterError(
            f"expected {n_coeff} SH coefficients for degree {degree}, got {sh.shape[-2]}"
        )
    norm = np.linalg.norm(view_dir, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-6):
        raise InvalidParameterError("view direction must be unit-norm within 1e-6")
    basis = sh_basis(view_dir, degree)
    raw = np.einsum("...k,...kc->...c", basis, sh) + 0.5
    return np.maximum(raw, 0.0)


def eval_sh_backward(sh, view_dir, degree, d_color):
    """Gradient of eval_sh with respect to the SH coefficients.

    The zero clamp gates the gradient; the view direction is treated as
    constant (exact for degree 0, forward-only for higher degrees).
    """
    sh = np.asarray(sh, dtype=np.float64)
    d_color = np.asarray(d_color, dtype=np.float64)
    basis = sh_basis(view_dir, degree)
    raw = np.einsum("...k,...kc->...c", basis, sh) + 0.5
    gate = (raw > 0.0).astype(np.float64)
    return np.einsum("...k,...c->...kc", basis, gate * d_color)


@dataclass
class Gaussian:
    """A single anisotropic 3D Gaussian primitive."""

    mu: np.ndarray
    rot: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    sh: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(3)
        self.rot = np.asarray(self.rot, dtype=np.float64).reshape(4)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.opacity_logit = float(self.opacity_logit)
        self.sh = np.asarray(self.sh, dtype=np.float64)
        if self.sh.ndim != 2 or self.sh.shape[1] != 3:
            raise InvalidParameterError("sh must have shape (n_coeff, 3)")

    @property
    def scale(self):
        return np.exp(self.log_scale)

    @property
    def opacity(self):
        return sigmoid(self.opacity_logit)

    @property
    def covariance(self):
        return covariance_from_params(self.rot, self.log_scale)


@dataclass
class GaussianScene:
    """A collection of Gaussians stored as packed arrays.

    mu (N,3), rot (N,4), log_scale (N,3), opacity_logit (N,),
    sh (N, (sh_degree+1)^2, 3). All Gaussians share one sh_degree.
    """

    mu: np.ndarray
    rot: np.ndarray
    log_scale: np.ndarray
    opacity_logit: np.ndarray
    sh: np.ndarray
    sh_degree: int = 0
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.mu = np.ascontiguousarray(self.mu, dtype=np.float64)
        self.rot = np.ascontiguousarray(self.rot, dtype=np.float64)
        self.log_scale = np.ascontiguousarray(self.log_scale, dtype=np.float64)
        self.opacity_logit = np.ascontiguousarray(self.opacity_logit, dtype=np.float64)
        self.sh = np.ascontiguousarray(self.sh, dtype=np.float64)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        n = self.mu.shape[0]
        n_coeff = (self.sh_degree + 1) ** 2
        if not (0 <= self.sh_degree <= MAX_SH_DEGREE):
            raise InvalidParameterError("sh_degree must be in [0, 3]")
        if (
            self.mu.shape != (n, 3)
            or self.rot.shape != (n, 4)
            or self.log_scale.shape != (n, 3)
            or self.opacity_logit.shape != (n,)
            or self.sh.shape != (n, n_coeff, 3)
        ):
            raise InvalidParameterError("inconsistent scene array shapes")

    def __len__(self):
        return self.mu.shape[0]

    def __getitem__(self, i) -> Gaussian:
        return Gaussian(
            self.mu[i], self.rot[i], self.log_scale[i], self.opacity_logit[i], self.sh[i]
        )

    @property
    def gaussians(self):
        return [self[i] for i in range(len(self))]

    @classmethod
    def from_gaussians(cls, gaussians, sh_degree=0, background=(0.0, 0.0, 0.0)):
        n_coeff = (sh_degree + 1) ** 2
        for g in gaussians:
            if g.sh.shape[0] != n_coeff:
                raise InvalidParameterError("all Gaussians must share one sh_degree")
        return cls(
            mu=np.stack([g.mu for g in gaussians]) if gaussians else np.zeros((0, 3)),
            rot=np.stack([g.rot for g in gaussians]) if gaussians else np.zeros((0, 4)),
            log_scale=np.stack([g.log_scale for g in gaussians])
            if gaussians
            else np.zeros((0, 3)),
            opacity_logit=np.array([g.opacity_logit for g in gaussians]),
            sh=np.stack([g.sh for g in gaussians]) if gaussians else np.zeros((0, n_coeff, 3)),
            sh_degree=sh_degree,
            background=np.asarray(background, dtype=np.float64),
        )

    def copy(self):
        return GaussianScene(
            self.mu.copy(),
            self.rot.copy(),
            self.log_scale.copy(),
            self.opacity_logit.copy(),
            self.sh.copy(),
            self.sh_degree,
            self.background.copy(),
        )


@dataclass
class Camera:
    """Pinhole camera with a fixed world-to-camera rigid transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray  # world -> camera rotation (3,3)
    t: np.ndarray  # world -> camera translation (3,)

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidParameterError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidParameterError("principal point must lie inside the image")
        if np.max(np.abs(self.R @ self.R.T - np.eye(3))) > 1e-9:
            raise InvalidParameterError("rotation block must be orthonormal within 1e-9")
        if abs(np.linalg.det(self.R) - 1.0) > 1e-9:
            raise InvalidParameterError("rotation block must have det +1 within 1e-9")

    @property
    def center(self):
        """Camera origin in world coordinates."""
        return -self.R.T @ self.t

    def world_to_cam(self, points):
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.R.T + self.t

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, width, height, cx=None, cy=None):
        eye = np.asarray(eye, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        up = np.asarray(up, dtype=np.float64)
        fwd = target - eye
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        right = right / np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])  # +z looks at the target, +y image-down
        return cls(
            fx=fx,
            fy=fy,
            cx=(width - 1) / 2.0 if cx is None else cx,
            cy=(height - 1) / 2.0 if cy is None else cy,
            width=width,
            height=height,
            R=R,
            t=-R @ eye,
        )
