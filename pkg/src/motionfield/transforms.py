"""Rigid transforms and twists.

A RigidTransform maps points p -> R @ p + t. Scene poses (object frame to
camera frame) use the same type. All math is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError

_ORTHO_TOL = 1e-9


def so3_hat(w) -> np.ndarray:
    """Skew-symmetric matrix [w]x such that hat(w) @ v = w x v."""
    w = np.asarray(w, dtype=np.float64)
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def so3_exp(w) -> np.ndarray:
    """Rodrigues formula: rotation matrix for axis-angle vector w."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        K = so3_hat(w)
        return np.eye(3) + K + 0.5 * (K @ K)
    K = so3_hat(w / theta)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def so3_log(R) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (inverse of so3_exp)."""
    R = np.asarray(R, dtype=np.float64)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-9:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    if theta > np.pi - 1e-6:
        # near pi the antisymmetric part vanishes; recover axis from R + I
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        # fix signs using the largest component
        k = int(np.argmax(axis))
        if axis[k] > 0:
            for i in range(3):
                if i != k and A[k, i] < 0:
                    axis[i] = -axis[i]
        axis /= max(np.linalg.norm(axis), 1e-15)
        return axis * theta
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return w * (theta / (2.0 * np.sin(theta)))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation (axis uniform on the sphere, angle via quaternion)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass
class RigidTransform:
    """Rotation matrix plus translation vector, p -> R p + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def validate(self, tol: float = _ORTHO_TOL) -> "RigidTransform":
        err = np.abs(self.R.T @ self.R - np.eye(3)).max()
        if err > tol:
            raise GeometryError(f"rotation not orthonormal (|R^T R - I| = {err:.3e})")
        if abs(np.linalg.det(self.R) - 1.0) > tol:
            raise GeometryError("rotation has det != +1")
        return self

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.R.T + self.t

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self o other: apply `other` first, then `self`."""
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.R.T, -self.R.T @ self.t)

    def almost_equal(self, other: "RigidTransform", tol: float = 1e-9) -> bool:
        return (
            np.abs(self.R - other.R).max() <= tol and np.abs(self.t - other.t).max() <= tol
        )


@dataclass
class Twist:
    """Per-step rigid motion: rotate by w about pivot, then translate by v."""

    v: np.ndarray
    w: np.ndarray
    pivot: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64).reshape(3)
        self.w = np.asarray(self.w, dtype=np.float64).reshape(3)
        self.pivot = np.asarray(self.pivot, dtype=np.float64).reshape(3)

    def step_transform(self, step: int = 0) -> RigidTransform:
        """Camera-frame transform taking step `step` to step `step + 1`.

        The pivot travels with the object: after i steps it sits at
        pivot + i v, so the i-th step rotates about the moved pivot.
        """
        R = so3_exp(self.w)
        pivot_i = self.pivot + step * self.v
        t = pivot_i + self.v - R @ pivot_i
        return RigidTransform(R, t)
