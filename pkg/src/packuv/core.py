"""Gaussian primitives, spherical/UV transforms and covariance projection.

Conventions used throughout the package:

* quaternions are stored as ``(w, x, y, z)``;
* ``u`` indexes azimuth (``theta``) and ``v`` indexes the polar angle
  (``phi``) on an ``M x N`` grid;
* pixel coordinates are ``(x, y)`` = ``(column, row)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateCovariance,
    InvalidConfig,
    InvalidDepth,
    OriginDegenerate,
)

LOW_PASS = 0.3
DET_EPS = 1e-7


@dataclass
class GaussianPrimitive:
    mu: np.ndarray
    s: np.ndarray
    q: np.ndarray
    alpha: float
    c: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(3)
        self.s = np.asarray(self.s, dtype=np.float64).reshape(3)
        self.q = np.asarray(self.q, dtype=np.float64).reshape(4)
        self.c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        self.alpha = float(self.alpha)

    def validate(self):
        if abs(np.linalg.norm(self.q) - 1.0) > 1e-6:
            raise ValueError("rotation quaternion is not unit length")
        if np.any(self.s <= 0):
            raise ValueError("scales must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("opacity must lie in [0, 1]")


@dataclass
class GaussianSet:
    """Struct-of-arrays container for ``n`` Gaussians.

    Attributes:
        mu: (n, 3) world positions.
        s: (n, 3) positive axis scales (post-activation).
        q: (n, 4) unit quaternions ``(w, x, y, z)``.
        alpha: (n,) opacities in [0, 1].
        c: (n, C) color coefficients, ``C = 3 * (deg + 1) ** 2``.
    """

    mu: np.ndarray
    s: np.ndarray
    q: np.ndarray
    alpha: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1, 3)
        n = len(self.mu)
        self.s = np.asarray(self.s, dtype=np.float64).reshape(n, 3)
        self.q = np.asarray(self.q, dtype=np.float64).reshape(n, 4)
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(n)
        c = np.asarray(self.c, dtype=np.float64)
        self.c = c.reshape(n, -1) if n else c.reshape(0, c.shape[-1] if c.ndim == 2 else 3)

    def __len__(self):
        return len(self.mu)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return GaussianPrimitive(self.mu[i], self.s[i], self.q[i], self.alpha[i], self.c[i])
        return GaussianSet(self.mu[i], self.s[i], self.q[i], self.alpha[i], self.c[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def color_dim(self):
        return self.c.shape[1]

    @classmethod
    def empty(cls, color_dim=3):
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0),
                   np.zeros((0, color_dim)))

    @classmethod
    def from_primitives(cls, prims):
        prims = list(prims)
        if not prims:
            return cls.empty()
        return cls(
            np.stack([p.mu for p in prims]),
            np.stack([p.s for p in prims]),
            np.stack([p.q for p in prims]),
            np.array([p.alpha for p in prims]),
            np.stack([p.c for p in prims]),
        )

    def validate(self):
        norms = np.linalg.norm(self.q, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("rotation quaternions must be unit length")
        if np.any(self.s <= 0):
            raise ValueError("scales must be positive")
        if np.any((self.alpha < 0) | (self.alpha > 1)):
            raise ValueError("opacities must lie in [0, 1]")

    def bbox_center(self):
        if len(self) == 0:
            raise ValueError("bounding box of an empty set")
        return 0.5 * (self.mu.min(axis=0) + self.mu.max(axis=0))


def as_gaussian_set(gaussians):
    if isinstance(gaussians, GaussianSet):
        return gaussians
    return GaussianSet.from_primitives(gaussians)


@dataclass(frozen=True)
class SphericalCoord:
    rho: float
    theta: float
    phi: float


@dataclass(frozen=True)
class UVCoord:
    u: int
    v: int
    k: int = 0


@dataclass
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    view: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.view = np.asarray(self.view, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidConfig("focal lengths must be positive")
        rot = self.view[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-5):
            raise InvalidConfig("view rotation block is not orthonormal")

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height, "view": self.view.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]), np.asarray(d.get("view", np.eye(4))))


def _normalize_theta(theta):
    # atan2 returns (-pi, pi]; fold +pi onto -pi
    return np.where(theta >= np.pi, theta - 2 * np.pi, theta)


def spherical_arrays(points, center):
    """Vectorized spherical transform; returns ``(rho, theta, phi)`` arrays.

    Points at the origin get ``rho = 0`` and ``phi = 0``; callers decide how to
    treat them.
    """
    d = np.asarray(points, dtype=np.float64).reshape(-1, 3) - np.asarray(center, dtype=np.float64)
    rho = np.sqrt(np.einsum("ij,ij->i", d, d))
    theta = _normalize_theta(np.arctan2(d[:, 1], d[:, 0]))
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(rho > 0, d[:, 2] / np.where(rho > 0, rho, 1.0), 1.0)
    phi = np.arccos(np.clip(ratio, -1.0, 1.0))
    return rho, theta, phi


def to_spherical(mu, center=(0.0, 0.0, 0.0)):
    rho, theta, phi = spherical_arrays(mu, center)
    if rho[0] == 0.0:
        raise OriginDegenerate("point coincides with the projection origin")
    return SphericalCoord(float(rho[0]), float(theta[0]), float(phi[0]))


def uv_project_arrays(theta, phi, M, N):
    u = np.floor((np.pi + np.asarray(theta)) / (2 * np.pi) * M)
    v = np.floor(np.asarray(phi) / np.pi * N)
    u = np.clip(u, 0, M - 1).astype(np.int64)
    v = np.clip(v, 0, N - 1).astype(np.int64)
    return u, v


def uv_project(sph, M, N):
    """Discrete ``(u, v)`` for a spherical coordinate on an ``M x N`` map."""
    if M < 1 or N < 1:
        raise InvalidConfig("map dimensions must be >= 1")
    u, v = uv_project_arrays(sph.theta, sph.phi, M, N)
    return int(u), int(v)


def ray_direction(u, v, M, N):
    """Unit direction(s) through the center of pixel ``(u, v)``; broadcasts."""
    theta = (np.asarray(u, dtype=np.float64) + 0.5) / M * 2 * np.pi - np.pi
    phi = (np.asarray(v, dtype=np.float64) + 0.5) / N * np.pi
    sp = np.sin(phi)
    return np.stack([sp * np.cos(theta), sp * np.sin(theta), np.cos(phi)], axis=-1)


def position_from_ray(uv, rho, center, M, N):
    if rho <= 0:
        raise InvalidDepth(f"depth must be positive, got {rho}")
    return np.asarray(center, dtype=np.float64) + rho * ray_direction(uv.u, uv.v, M, N)


def quat_to_rotmat(q):
    """Rotation matrices for ``(..., 4)`` quaternions ``(w, x, y, z)``."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def covariance3d(s, q):
    """``R(q) diag(s^2) R(q)^T``; broadcasts over leading axes."""
    s = np.asarray(s, dtype=np.float64)
    R = quat_to_rotmat(q)
    M = R * s[..., None, :]
    return M @ np.swapaxes(M, -1, -2)


@dataclass
class Projection:
    """Batched EWA projection result; ``valid`` flags usable entries."""

    sigma2d: np.ndarray
    mean_px: np.ndarray
    z: np.ndarray
    det: np.ndarray
    valid: np.ndarray


def project_covariances(sigma3d, mu, cam):
    sigma3d = np.asarray(sigma3d, dtype=np.float64).reshape(-1, 3, 3)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1, 3)
    W = cam.view[:3, :3]
    t = cam.view[:3, 3]
    p = mu @ W.T + t
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    n = len(mu)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 0, 2] = -cam.fx * x / (zs * zs)
    J[:, 1, 1] = cam.fy / zs
    J[:, 1, 2] = -cam.fy * y / (zs * zs)
    cov_cam = W @ sigma3d @ W.T
    sigma2d = J @ cov_cam @ np.swapaxes(J, 1, 2)
    sigma2d[:, 0, 0] += LOW_PASS
    sigma2d[:, 1, 1] += LOW_PASS
    det = sigma2d[:, 0, 0] * sigma2d[:, 1, 1] - sigma2d[:, 0, 1] ** 2
    mean_px = np.stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy], axis=1)
    valid = front & (det > DET_EPS)
    return Projection(sigma2d, mean_px, z, det, valid)


def project_covariance(sigma3d, mu, cam):
    """EWA-project one 3D covariance into ``cam``'s image plane.

    Returns ``(sigma2d, mean_px, z)``; ``sigma2d`` includes the 0.3 px^2
    low-pass term on its diagonal.
    """
    pr = project_covariances(sigma3d, mu, cam)
    if pr.z[0] <= 0:
        raise BehindCamera(f"camera-space depth {pr.z[0]:g} <= 0")
    if not pr.det[0] > DET_EPS:
        raise DegenerateCovariance(f"det(sigma2d) = {pr.det[0]:g} <= {DET_EPS:g}")
    return pr.sigma2d[0], pr.mean_px[0], float(pr.z[0])

