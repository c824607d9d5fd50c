"""Depth/mask/shaded rendering of posed triangle meshes by ray casting.

Rays go through pixel centers with unnormalized direction
((u - c_x)/f_x, (v - c_y)/f_y, 1), so the ray parameter t at a hit equals
the camera-frame z of the hit point, i.e. the depth-buffer value.

A flattened median-split BVH accelerates traversal; a brute-force
all-triangles kernel is kept behind `use_bvh=False` as the correctness
oracle. Kernels are numba-compiled and cached on disk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .camera import PinholeIntrinsics, pixel_grid
from .meshes import TriMesh
from .transforms import RigidTransform

_EPS = 1e-12
_LEAF_SIZE = 4

LIGHT_DIR = np.array([0.35, -0.5, -0.75])  # fixed directional light, camera frame
AMBIENT = 0.25
DIFFUSE = 0.6


@dataclass
class RenderOutput:
    depth: np.ndarray        # (H, W) meters, 0 where no hit
    mask: np.ndarray         # (H, W) uint8
    hit_points: np.ndarray   # (H, W, 3) camera frame, 0 off-mask
    shaded: np.ndarray       # (H, W, 3) in [0, 1]


class MeshBVH:
    """Flattened BVH over a mesh's triangles, built once in object space."""

    def __init__(self, mesh: TriMesh):
        v = mesh.vertices
        f = mesh.triangles
        tri = v[f]  # (T, 3, 3)
        lo = tri.min(axis=1)
        hi = tri.max(axis=1)
        centroids = tri.mean(axis=1)

        n_tri = len(f)
        max_nodes = 2 * n_tri
        self.node_min = np.empty((max_nodes, 3), dtype=np.float64)
        self.node_max = np.empty((max_nodes, 3), dtype=np.float64)
        self.node_first = np.empty(max_nodes, dtype=np.int32)   # leaf: tri start; inner: left child
        self.node_count = np.empty(max_nodes, dtype=np.int32)   # leaf: tri count; inner: 0
        order = np.arange(n_tri)
        self._n_nodes = 0

        def build(idx):
            node = self._n_nodes
            self._n_nodes += 1
            self.node_min[node] = lo[idx].min(axis=0)
            self.node_max[node] = hi[idx].max(axis=0)
            if len(idx) <= _LEAF_SIZE:
                start = build.cursor
                order[start : start + len(idx)] = idx
                build.cursor += len(idx)
                self.node_first[node] = start
                self.node_count[node] = len(idx)
                return node
            c = centroids[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            mid = len(idx) // 2
            part = idx[np.argsort(c[:, axis], kind="stable")]
            self.node_count[node] = 0
            left = build(part[:mid])
            right = build(part[mid:])
            self.node_first[node] = left
            # right child is found at left subtree end; store it explicitly
            self._right[node] = right
            return node

        self._right = np.zeros(max_nodes, dtype=np.int32)
        build.cursor = 0
        build(order.copy())
        m = self._n_nodes
        self.node_min = self.node_min[:m]
        self.node_max = self.node_max[:m]
        self.node_first = self.node_first[:m]
        self.node_count = self.node_count[:m]
        self.node_right = self._right[:m]

        tri_o = tri[order]
        self.tri_v0 = np.ascontiguousarray(tri_o[:, 0])
        self.tri_e1 = np.ascontiguousarray(tri_o[:, 1] - tri_o[:, 0])
        self.tri_e2 = np.ascontiguousarray(tri_o[:, 2] - tri_o[:, 0])
        normals = np.cross(self.tri_e1, self.tri_e2)
        norms = np.linalg.norm(normals, axis=1, keepdims=True)
        self.tri_normal = normals / np.maximum(norms, _EPS)


@numba.njit(cache=True)
def _intersect_tri(v0, e1, e2, ox, oy, oz, dx, dy, dz, t_best):
    hx = dy * e2[2] - dz * e2[1]
    hy = dz * e2[0] - dx * e2[2]
    hz = dx * e2[1] - dy * e2[0]
    a = e1[0] * hx + e1[1] * hy + e1[2] * hz
    if -1e-14 < a < 1e-14:
        return -1.0
    f = 1.0 / a
    sx = ox - v0[0]
    sy = oy - v0[1]
    sz = oz - v0[2]
    u = f * (sx * hx + sy * hy + sz * hz)
    if u < -1e-12 or u > 1.0 + 1e-12:
        return -1.0
    qx = sy * e1[2] - sz * e1[1]
    qy = sz * e1[0] - sx * e1[2]
    qz = sx * e1[1] - sy * e1[0]
    v = f * (dx * qx + dy * qy + dz * qz)
    if v < -1e-12 or u + v > 1.0 + 1e-12:
        return -1.0
    t = f * (e2[0] * qx + e2[1] * qy + e2[2] * qz)
    if t <= 1e-9 or t >= t_best:
        return -1.0
    return t


@numba.njit(cache=True)
def _raycast_bvh(node_min, node_max, node_first, node_count, node_right,
                 tri_v0, tri_e1, tri_e2, origin, dirs, out_t, out_tri):
    n_rays = dirs.shape[0]
    stack = np.empty(128, dtype=np.int32)
    ox, oy, oz = origin[0], origin[1], origin[2]
    for r in range(n_rays):
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        inv_x = 1.0 / dx if abs(dx) > _EPS else np.inf
        inv_y = 1.0 / dy if abs(dy) > _EPS else np.inf
        inv_z = 1.0 / dz if abs(dz) > _EPS else np.inf
        t_best = np.inf
        best_tri = -1
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            # slab test
            tx1 = (node_min[node, 0] - ox) * inv_x
            tx2 = (node_max[node, 0] - ox) * inv_x
            tmin = min(tx1, tx2)
            tmax = max(tx1, tx2)
            ty1 = (node_min[node, 1] - oy) * inv_y
            ty2 = (node_max[node, 1] - oy) * inv_y
            tmin = max(tmin, min(ty1, ty2))
            tmax = min(tmax, max(ty1, ty2))
            tz1 = (node_min[node, 2] - oz) * inv_z
            tz2 = (node_max[node, 2] - oz) * inv_z
            tmin = max(tmin, min(tz1, tz2))
            tmax = min(tmax, max(tz1, tz2))
            if tmax < max(tmin, 0.0) or tmin >= t_best:
                continue
            cnt = node_count[node]
            if cnt > 0:
                first = node_first[node]
                for k in range(first, first + cnt):
                    t = _intersect_tri(tri_v0[k], tri_e1[k], tri_e2[k],
                                       ox, oy, oz, dx, dy, dz, t_best)
                    if t > 0.0:
                        t_best = t
                        best_tri = k
            else:
                stack[sp] = node_first[node]
                sp += 1
                stack[sp] = node_right[node]
                sp += 1
        out_t[r] = t_best
        out_tri[r] = best_tri


@numba.njit(cache=True)
def _raycast_brute(tri_v0, tri_e1, tri_e2, origin, dirs, out_t, out_tri):
    n_rays = dirs.shape[0]
    n_tri = tri_v0.shape[0]
    ox, oy, oz = origin[0], origin[1], origin[2]
    for r in range(n_rays):
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        t_best = np.inf
        best_tri = -1
        for k in range(n_tri):
            t = _intersect_tri(tri_v0[k], tri_e1[k], tri_e2[k],
                               ox, oy, oz, dx, dy, dz, t_best)
            if t > 0.0:
                t_best = t
                best_tri = k
        out_t[r] = t_best
        out_tri[r] = best_tri


def _bvh_for(mesh: TriMesh) -> MeshBVH:
    bvh = getattr(mesh, "_bvh", None)
    if bvh is None:
        bvh = MeshBVH(mesh)
        mesh._bvh = bvh
    return bvh


def camera_ray_dirs(K: PinholeIntrinsics) -> np.ndarray:
    """(H*W, 3) unnormalized pixel-center ray directions, z component 1."""
    grid = pixel_grid(K).reshape(-1, 2)
    d = np.empty((grid.shape[0], 3), dtype=np.float64)
    d[:, 0] = (grid[:, 0] - K.c_x) / K.f_x
    d[:, 1] = (grid[:, 1] - K.c_y) / K.f_y
    d[:, 2] = 1.0
    return d


def raycast(mesh: TriMesh, pose: RigidTransform, K: PinholeIntrinsics,
            use_bvh: bool = True) -> RenderOutput:
    """Render a posed mesh: nearest-hit depth, mask, hit points, shaded gray.

    The BVH lives in object space; rays are moved there with the inverse
    pose, which keeps the ray parameter equal to camera depth.
    """
    bvh = _bvh_for(mesh)
    H, W = K.height, K.width
    dirs_cam = camera_ray_dirs(K)
    dirs_obj = np.ascontiguousarray(dirs_cam @ pose.R)      # R^T applied to rows
    origin_obj = np.ascontiguousarray(-(pose.R.T @ pose.t))

    t = np.empty(H * W, dtype=np.float64)
    tri = np.empty(H * W, dtype=np.int32)
    if use_bvh:
        _raycast_bvh(bvh.node_min, bvh.node_max, bvh.node_first, bvh.node_count,
                     bvh.node_right, bvh.tri_v0, bvh.tri_e1, bvh.tri_e2,
                     origin_obj, dirs_obj, t, tri)
    else:
        _raycast_brute(bvh.tri_v0, bvh.tri_e1, bvh.tri_e2,
                       origin_obj, dirs_obj, t, tri)

    hit = tri >= 0
    depth = np.where(hit, t, 0.0).reshape(H, W)
    mask = hit.reshape(H, W).astype(np.uint8)
    points = np.zeros((H * W, 3), dtype=np.float64)
    points[hit] = dirs_cam[hit] * t[hit, None]
    hit_points = points.reshape(H, W, 3)

    # Lambertian gray from a fixed light, replicated to 3 channels as the
    # RGB stand-in for the policy observation
    shade = np.zeros(H * W, dtype=np.float64)
    if hit.any():
        n_obj = bvh.tri_normal[tri[hit]]
        n_cam = n_obj @ pose.R.T
        light = LIGHT_DIR / np.linalg.norm(LIGHT_DIR)
        lam = np.abs(n_cam @ light)
        shade[hit] = np.clip(AMBIENT + DIFFUSE * lam, 0.0, 1.0)
    shaded = np.repeat(shade.reshape(H, W, 1), 3, axis=2)
    return RenderOutput(depth=depth, mask=mask, hit_points=hit_points, shaded=shaded)
