"""Pinhole camera model: projection, unprojection, dense intrinsics features.

Conventions used throughout the package:

* camera frame: x right, y down, z forward (points in front of the camera
  have z > 0); units are meters.
* pixel coordinates (u, v) are continuous and measured at pixel centers:
  the integer pixel (column i, row j) has continuous coordinate
  (i + 0.5, j + 0.5); u grows rightward, v downward.
* geometry is computed in float64; image tensors handed to the network are
  float32.

Points are plain ndarrays of shape (..., 3), pixels of shape (..., 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError

# Inverse-focal channels of the intrinsics map are multiplied by this
# constant so they stay O(1); it equals the full-scale training resolution.
INV_FOCAL_NORMALIZATION = 256.0


@dataclass(frozen=True)
class PinholeIntrinsics:
    """Pinhole intrinsics in pixels, plus the image size they refer to."""

    f_x: float
    f_y: float
    c_x: float
    c_y: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.f_x > 0 and self.f_y > 0):
            raise GeometryError(f"focal lengths must be positive, got ({self.f_x}, {self.f_y})")
        if not (0 < self.c_x < self.width and 0 < self.c_y < self.height):
            raise GeometryError(
                f"principal point ({self.c_x}, {self.c_y}) outside image {self.width}x{self.height}"
            )

    @classmethod
    def from_vfov(cls, vfov_deg: float, width: int, height: int) -> "PinholeIntrinsics":
        """Square-pixel intrinsics from a vertical field of view in degrees."""
        f = (height / 2.0) / np.tan(np.deg2rad(vfov_deg) / 2.0)
        return cls(f_x=f, f_y=f, c_x=width / 2.0, c_y=height / 2.0, width=width, height=height)

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.f_x, self.f_y, self.c_x, self.c_y, self.width, self.height], dtype=np.float64
        )

    @classmethod
    def from_array(cls, a) -> "PinholeIntrinsics":
        a = np.asarray(a, dtype=np.float64)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]), int(a[4]), int(a[5]))


def pixel_grid(K: PinholeIntrinsics) -> np.ndarray:
    """(H, W, 2) array of continuous pixel-center coordinates (u, v)."""
    u = np.arange(K.width, dtype=np.float64) + 0.5
    v = np.arange(K.height, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu, vv], axis=-1)


def project(p, K: PinholeIntrinsics) -> np.ndarray:
    """Project camera-frame points (..., 3) to pixels (..., 2).

    Raises GeometryError if any z <= 0.
    """
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 0):
        raise GeometryError("cannot project points with non-positive depth")
    u = K.f_x * p[..., 0] / z + K.c_x
    v = K.f_y * p[..., 1] / z + K.c_y
    return np.stack([u, v], axis=-1)


def unproject(px, depth, K: PinholeIntrinsics) -> np.ndarray:
    """Lift pixels (..., 2) with depths (...) back to camera-frame points.

    Exact inverse of `project`: X = (u - c_x) * depth / f_x,
    Y = (v - c_y) * depth / f_y, Z = depth.
    """
    px = np.asarray(px, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise GeometryError("cannot unproject with non-positive depth")
    x = (px[..., 0] - K.c_x) * depth / K.f_x
    y = (px[..., 1] - K.c_y) * depth / K.f_y
    return np.stack([x, y, np.broadcast_to(depth, x.shape)], axis=-1)


def intrinsics_map(K: PinholeIntrinsics, s: float = INV_FOCAL_NORMALIZATION) -> np.ndarray:
    """Dense (H, W, 4) intrinsics feature map.

    Channel order at pixel-center (u, v):
    ((v - c_y)/f_y, (u - c_x)/f_x, s/f_y, s/f_x). The two inverse-focal
    channels are scaled by `s` so their magnitude is O(1).
    """
    grid = pixel_grid(K)
    out = np.empty((K.height, K.width, 4), dtype=np.float64)
    out[..., 0] = (grid[..., 1] - K.c_y) / K.f_y
    out[..., 1] = (grid[..., 0] - K.c_x) / K.f_x
    out[..., 2] = s / K.f_y
    out[..., 3] = s / K.f_x
    return out


def depth_sensitivity(Z: float, f: float, X: float, dxp: float) -> float:
    """First-order z-translation error caused by a pixel tracking error.

    For a point at lateral offset X and depth Z viewed with focal length f,
    a pixel error dxp on the observed x-motion maps to a depth-motion error
    of -Z^2 / (f X) * dxp. Diverges as X -> 0 (camera looking straight at
    the point), which is why pixel motion alone cannot recover z-motion.
    """
    if f <= 0:
        raise GeometryError("focal length must be positive")
    if X == 0:
        raise GeometryError("depth sensitivity is singular at X = 0")
    return -(Z * Z) / (f * X) * dxp


def motion_differential(Z: float, dx: float, dZ: float, x: float, K: PinholeIntrinsics) -> float:
    """First-order x-motion from pixel motion dx and depth motion dZ.

    dX = (Z / f_x) dx + ((x - c_x) / f_x) dZ; the two per-pixel factors are
    exactly what the intrinsics map provides to the network.
    """
    return (Z / K.f_x) * dx + ((x - K.c_x) / K.f_x) * dZ
