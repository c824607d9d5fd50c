"""Direct motion-field baseline: unproject tracked pixels and subtract.

No learned denoising and deliberately no heuristic outlier filtering; this
is the plain comparison method the estimator has to beat. Gross input
errors flow straight through (a wrong depth corrupts X and Y via the
unprojection), which is exactly the failure mode the learned model fixes.
"""

from __future__ import annotations

import numpy as np

from .camera import PinholeIntrinsics, pixel_grid
from .errors import GeometryError
from .scene import MotionField


def direct_motion_field(noisy_depth, depth_valid, pixel_flow, flow_valid, mask,
                        K: PinholeIntrinsics):
    """Compute the motion field by double unprojection of the noisy inputs.

    For every pixel valid in both inputs: P0 = unproject(p, depth),
    P1 = unproject(p + flow_xy, depth + flow_z), motion = P1 - P0. Returns
    (MotionField, valid) where `valid` marks the pixels actually computed.
    """
    depth = np.asarray(noisy_depth, dtype=np.float64)
    flow = np.asarray(pixel_flow, dtype=np.float64)
    m = np.asarray(mask).astype(bool)
    valid = (np.asarray(depth_valid).astype(bool) & np.asarray(flow_valid).astype(bool) & m
             & (depth > 0))
    if depth.shape != m.shape or flow.shape[:2] != m.shape:
        raise GeometryError("inputs must share one resolution")

    H, W = depth.shape
    motion = np.zeros((H, W, 3), dtype=np.float64)
    if valid.any():
        grid = pixel_grid(K)
        d0 = depth[valid]
        u0 = grid[valid][:, 0]
        v0 = grid[valid][:, 1]
        u1 = u0 + flow[valid][:, 0]
        v1 = v0 + flow[valid][:, 1]
        d1 = d0 + flow[valid][:, 2]
        x0 = (u0 - K.c_x) * d0 / K.f_x
        y0 = (v0 - K.c_y) * d0 / K.f_y
        x1 = (u1 - K.c_x) * d1 / K.f_x
        y1 = (v1 - K.c_y) * d1 / K.f_y
        motion[valid] = np.stack([x1 - x0, y1 - y0, d1 - d0], axis=-1)

    return MotionField(depth=depth.copy(), motion=motion), valid
