"""Rigid transforms, Rodrigues vectors and pinhole projection.

Points are plain numpy arrays of shape (3,) or (N, 3). Frame changes follow the
``a_M_b`` convention: ``a_M_b.apply(p_b)`` gives the coordinates of ``p_b`` in
frame ``a``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDepth

SMALL_ANGLE = 1e-7
ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Four-parameter pinhole model shared by the depth camera, color camera and projector."""

    alpha_u: float
    alpha_v: float
    u0: float
    v0: float

    def __post_init__(self):
        if not (self.alpha_u > 0 and self.alpha_v > 0):
            raise ValueError(f"focal terms must be positive, got {self.alpha_u}, {self.alpha_v}")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.alpha_u, 0.0, self.u0], [0.0, self.alpha_v, self.v0], [0.0, 0.0, 1.0]])

    def as_dict(self) -> dict:
        return {"alpha_u": float(self.alpha_u), "alpha_v": float(self.alpha_v), "u0": float(self.u0), "v0": float(self.v0)}


def skew(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def skew_many(p) -> np.ndarray:
    """Stacked skew matrices, shape (N, 3, 3), for points of shape (N, 3)."""
    p = np.asarray(p, dtype=float).reshape(-1, 3)
    S = np.zeros((len(p), 3, 3))
    S[:, 0, 1], S[:, 0, 2] = -p[:, 2], p[:, 1]
    S[:, 1, 0], S[:, 1, 2] = p[:, 2], -p[:, 0]
    S[:, 2, 0], S[:, 2, 1] = -p[:, 1], p[:, 0]
    return S


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar decomposition through SVD)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rotation_from_vector(theta_w) -> np.ndarray:
    """Rodrigues formula: angle-times-axis vector to rotation matrix."""
    w = np.asarray(theta_w, dtype=float)
    theta = float(np.linalg.norm(w))
    W = skew(w)
    if theta < SMALL_ANGLE:
        # second-order series; exact to machine precision at this size
        return np.eye(3) + W + 0.5 * (W @ W)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * W + b * (W @ W)


def vector_from_rotation(R: np.ndarray) -> np.ndarray:
    """Inverse Rodrigues formula, angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    v = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = float(np.linalg.norm(v))
    c = 0.5 * (np.trace(R) - 1.0)
    theta = float(np.arctan2(s, c))
    if theta < SMALL_ANGLE:
        return v  # sin(theta) ~ theta
    if c > 0.0:
        return v * (theta / s)
    # large angles: the symmetric part carries the axis accurately
    S = 0.5 * (R + R.T) - c * np.eye(3)
    S /= 1.0 - c
    k = int(np.argmax(np.diag(S)))
    axis = S[:, k] / np.sqrt(S[k, k])
    if np.dot(axis, v) < 0.0:
        axis = -axis
    return axis * theta


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation + translation (meters). Applies as ``R @ p + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        drift = np.abs(R.T @ R - np.eye(3)).max()
        if drift > 1e-3 or np.linalg.det(R) < 0.0:
            raise ValueError("rotation part is not a proper rotation matrix")
        if drift > ORTHO_TOL:
            R = orthonormalize(R)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "RigidTransform":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_translation(cls, t) -> "RigidTransform":
        return cls(np.eye(3), t)

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def inverse(self) -> "RigidTransform":
        return invert(self)

    def apply(self, p) -> np.ndarray:
        return apply(self, p)

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )

    def __repr__(self):
        r = transform_to_pose(self)
        return f"RigidTransform(t={np.round(r[:3], 6).tolist()}, theta_w={np.round(r[3:], 6).tolist()})"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a @ b``: apply ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(M: RigidTransform) -> RigidTransform:
    Rt = M.rotation.T
    return RigidTransform(Rt, -Rt @ M.translation)


def apply(M: RigidTransform, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p @ M.rotation.T + M.translation


def pose_to_transform(r) -> RigidTransform:
    """6-vector [tX, tY, tZ, thetawX, thetawY, thetawZ] (meters, radians) to a transform."""
    r = np.asarray(r, dtype=float).reshape(6)
    return RigidTransform(rotation_from_vector(r[3:]), r[:3])


def transform_to_pose(M: RigidTransform) -> np.ndarray:
    return np.concatenate([M.translation, vector_from_rotation(M.rotation)])


def pose_from_mm(values) -> RigidTransform:
    """Config-file pose: translation in millimeters, rotation vector in radians."""
    v = np.asarray(values, dtype=float).reshape(6)
    return pose_to_transform(np.concatenate([v[:3] / 1000.0, v[3:]]))


def pose_to_mm(M: RigidTransform) -> list[float]:
    r = transform_to_pose(M)
    return [float(x) for x in np.concatenate([r[:3] * 1000.0, r[3:]])]


def project(gamma: CameraIntrinsics, p) -> np.ndarray:
    """Perspective projection of camera-frame point(s) to pixel coordinates."""
    p = np.asarray(p, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0.0):
        raise NonPositiveDepth("cannot project a point with z <= 0")
    u = gamma.alpha_u * p[..., 0] / z + gamma.u0
    v = gamma.alpha_v * p[..., 1] / z + gamma.v0
    return np.stack([u, v], axis=-1)


def back_project(gamma: CameraIntrinsics, px, depth) -> np.ndarray:
    """Inverse projection of pixel(s) with known camera-space depth."""
    px = np.asarray(px, dtype=float)
    depth = np.asarray(depth, dtype=float)
    if np.any(depth <= 0.0):
        raise NonPositiveDepth("back-projection needs depth > 0")
    x = depth * (px[..., 0] - gamma.u0) / gamma.alpha_u
    y = depth * (px[..., 1] - gamma.v0) / gamma.alpha_v
    return np.stack([x, y, depth * np.ones_like(x)], axis=-1)


def rotation_angle_between(a: RigidTransform, b: RigidTransform) -> float:
    """Angle (radians) of the relative rotation between two transforms."""
    return float(np.linalg.norm(vector_from_rotation(a.rotation.T @ b.rotation)))
