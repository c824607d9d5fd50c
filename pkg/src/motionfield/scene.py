"""Random rigid scenes: sampling, twist motion, and motion-field labels.

A scene is one mesh posed in front of a randomized camera, moved by a
constant twist for a few steps. Ray casting each step gives depth, mask
and hit points; the analytic step transform gives the exact per-pixel 3D
motion label and the corresponding pixel-flow observation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .camera import PinholeIntrinsics, pixel_grid, project
from .errors import GenerationError
from .meshes import TriMesh, load_mesh, random_primitive
from .render import RenderOutput, raycast
from .transforms import RigidTransform, Twist, random_rotation, so3_exp


@dataclass
class MotionField:
    """Per-pixel depth plus 3D displacement in the frame-0 camera frame."""

    depth: np.ndarray   # (H, W) meters
    motion: np.ndarray  # (H, W, 3) meters

    def as_tensor(self) -> np.ndarray:
        return np.concatenate([self.depth[..., None], self.motion], axis=-1)

    @classmethod
    def from_tensor(cls, t) -> "MotionField":
        t = np.asarray(t)
        return cls(depth=t[..., 0], motion=t[..., 1:4])


@dataclass
class SceneConfig:
    resolution: int = 64
    fov_min_deg: float = 40.0
    fov_max_deg: float = 55.0
    depth_min: float = 0.3
    depth_max: float = 1.0
    max_speed: float = 0.05      # |v| per step, meters
    max_spin: float = 0.3        # |w| per step, radians
    n_steps_min: int = 2
    n_steps_max: int = 6
    min_mask_px: int = 64
    min_visible_fraction: float = 0.5
    min_projected_radius_px: float = 8.0
    max_resample: int = 100
    mesh_paths: tuple = ()

    def __post_init__(self):
        if self.resolution < 32:
            raise GenerationError(f"resolution must be >= 32, got {self.resolution}")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["mesh_paths"] = list(self.mesh_paths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        from .config import build_dataclass

        return build_dataclass(cls, d, "scene")


def apply_twist(pose: RigidTransform, tw: Twist, steps: int) -> RigidTransform:
    """Pose after `steps` applications of the twist as one composite motion:
    rotation exp([w] * steps) about the pivot, then translation v * steps."""
    if steps < 0:
        raise GenerationError("steps must be >= 0")
    R = so3_exp(tw.w * steps)
    new_R = R @ pose.R
    new_t = R @ (pose.t - tw.pivot) + tw.pivot + steps * tw.v
    return RigidTransform(new_R, new_t)


def simulate_rollout_step(pose: RigidTransform, T_cmd: RigidTransform) -> RigidTransform:
    """Kinematic stand-in for the robot executing a camera-frame command."""
    T_cmd.validate(tol=1e-7)
    return T_cmd.compose(pose)


def _visible_fraction(mesh: TriMesh, pose: RigidTransform, K: PinholeIntrinsics) -> float:
    p = pose.apply(mesh.vertices)
    z_ok = p[:, 2] > 1e-6
    if not z_ok.any():
        return 0.0
    u = K.f_x * p[z_ok, 0] / p[z_ok, 2] + K.c_x
    v = K.f_y * p[z_ok, 1] / p[z_ok, 2] + K.c_y
    inside = (u >= 0) & (u <= K.width) & (v >= 0) & (v <= K.height)
    return float(inside.sum()) / len(mesh.vertices)


def _sample_mesh(rng: np.random.Generator, cfg: SceneConfig) -> TriMesh:
    if cfg.mesh_paths and rng.random() < 0.5:
        path = cfg.mesh_paths[int(rng.integers(0, len(cfg.mesh_paths)))]
        return load_mesh(path)
    return random_primitive(rng)


def sample_scene(seed, cfg: SceneConfig = SceneConfig()):
    """Draw (mesh, pose, intrinsics, twist, n_steps) for one scene.

    The object starts fully inside the frustum at a depth in
    [depth_min, depth_max]; the twist is resampled until at least
    `min_visible_fraction` of the object stays in view for every step.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    res = cfg.resolution

    fov = rng.uniform(cfg.fov_min_deg, cfg.fov_max_deg)
    K = PinholeIntrinsics.from_vfov(fov, res, res)
    half_tan = np.tan(np.deg2rad(fov) / 2.0)

    for _ in range(cfg.max_resample):
        mesh = _sample_mesh(rng, cfg)
        r = mesh.bounding_radius()
        z = rng.uniform(cfg.depth_min, cfg.depth_max)
        # bounding sphere fully inside all four frustum planes, with slack
        lateral = z * half_tan - r * np.sqrt(1.0 + half_tan * half_tan)
        if lateral <= 0 or z - r < 0.05:
            continue
        if K.f_y * r / z < cfg.min_projected_radius_px:
            continue
        x = rng.uniform(-0.85 * lateral, 0.85 * lateral)
        y = rng.uniform(-0.85 * lateral, 0.85 * lateral)
        pose = RigidTransform(random_rotation(rng), np.array([x, y, z]))
        if _visible_fraction(mesh, pose, K) < 1.0:
            continue
        break
    else:
        raise GenerationError(f"could not place an object in view after {cfg.max_resample} tries")

    n_steps = int(rng.integers(cfg.n_steps_min, cfg.n_steps_max + 1))
    for _ in range(cfg.max_resample):
        v_dir = rng.normal(size=3)
        v_dir /= np.linalg.norm(v_dir)
        w_dir = rng.normal(size=3)
        w_dir /= np.linalg.norm(w_dir)
        tw = Twist(
            v=v_dir * rng.uniform(0.0, cfg.max_speed),
            w=w_dir * rng.uniform(0.0, cfg.max_spin),
            pivot=pose.t.copy(),
        )
        ok = all(
            _visible_fraction(mesh, apply_twist(pose, tw, i), K) >= cfg.min_visible_fraction
            for i in range(1, n_steps + 1)
        )
        if ok:
            return mesh, pose, K, tw, n_steps
    raise GenerationError(f"no twist kept the object visible after {cfg.max_resample} tries")


def label_sample(mesh: TriMesh, pose0: RigidTransform, tw: Twist, K: PinholeIntrinsics,
                 use_bvh: bool = True):
    """Ground-truth labels for one step starting at `pose0`.

    Returns (MotionField, pixel_flow (H, W, 3), render0, render1). For each
    mask pixel with hit point q: motion = T q - q with T the one-step twist
    transform about the twist's pivot; pixel_flow carries the image-plane
    displacement of the tracked point and its raw depth change.
    """
    render0 = raycast(mesh, pose0, K, use_bvh=use_bvh)
    pose1 = apply_twist(pose0, tw, 1)
    render1 = raycast(mesh, pose1, K, use_bvh=use_bvh)

    H, W = K.height, K.width
    T = tw.step_transform(0)
    m = render0.mask.astype(bool)
    motion = np.zeros((H, W, 3), dtype=np.float64)
    flow = np.zeros((H, W, 3), dtype=np.float64)
    if m.any():
        q = render0.hit_points[m]
        q1 = T.apply(q)
        motion[m] = q1 - q
        grid = pixel_grid(K)
        flow_xy = project(q1, K) - grid[m]
        flow[m, 0:2] = flow_xy
        flow[m, 2] = q1[:, 2] - q[:, 2]

    fieldm = MotionField(depth=render0.depth.copy(), motion=motion)
    return fieldm, flow, render0, render1
