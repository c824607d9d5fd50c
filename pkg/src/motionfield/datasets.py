"""Dataset generation (random scenes and scripted demos) and input assembly.

Sample content is a pure function of (root seed, split, scene index), so
generation is byte-deterministic regardless of worker count: workers only
change who computes a scene, never what it contains.
"""

from __future__ import annotations

import functools
import multiprocessing
import os
import time
from dataclasses import dataclass

import numpy as np

from .camera import PinholeIntrinsics, intrinsics_map
from .errors import ConfigError, GenerationError
from .meshes import make_primitive
from .noise import NoiseConfig, corrupt_depth, corrupt_flow, subset_mask
from .records import MAX_SHARD_RECORDS, Manifest, SampleRecord, ShardWriter
from .render import raycast
from .scene import SceneConfig, apply_twist, label_sample, sample_scene
from .transforms import RigidTransform, Twist, random_rotation, so3_exp, so3_log

_SPLIT_SALTS = {"train": 0x7261, "val": 0x7661, "test": 0x7465, "demos": 0x64656D}

PHASE1_CHANNELS = 10
PHASE2_CHANNELS = 9
PHASE2_DIFFUSION_CHANNELS = 13


def _scene_seedseq(root_seed: int, split: str, scene_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(root_seed), _SPLIT_SALTS[split], int(scene_index)])


def generate_scene_records(scene_index: int, root_seed: int, split: str,
                           scene_cfg: SceneConfig, noise_cfg: NoiseConfig):
    """All records of one scene (one per consecutive step pair)."""
    ss = _scene_seedseq(root_seed, split, scene_index)
    scene_id = int(ss.generate_state(1, np.uint64)[0])
    children = ss.spawn(scene_cfg.n_steps_max + 1)
    mesh, pose0, K, tw, n_steps = sample_scene(children[0], scene_cfg)

    records = []
    for i in range(n_steps):
        pose_i = apply_twist(pose0, tw, i)
        tw_i = Twist(tw.v, tw.w, tw.pivot + i * tw.v)
        field, flow, r0, r1 = label_sample(mesh, pose_i, tw_i, K)
        if r0.mask.sum() < scene_cfg.min_mask_px or r1.mask.sum() < scene_cfg.min_mask_px:
            continue
        nrng = np.random.default_rng(children[i + 1])
        m = r0.mask.astype(bool)
        if noise_cfg.subset_mask_prob > 0 and nrng.random() < noise_cfg.subset_mask_prob:
            m = subset_mask(m, noise_cfg, nrng)
            if m.sum() < scene_cfg.min_mask_px:
                m = r0.mask.astype(bool)
        noisy_depth, depth_valid = corrupt_depth(r0.depth, m, noise_cfg, nrng)
        noisy_flow, flow_valid = corrupt_flow(flow, m, noise_cfg, nrng)
        records.append(SampleRecord(
            intrinsics=K,
            clean_depth=r0.depth.astype(np.float32),
            noisy_depth=noisy_depth.astype(np.float32),
            depth_valid=depth_valid.astype(np.float32),
            pixel_flow=noisy_flow.astype(np.float32),
            flow_valid=flow_valid.astype(np.float32),
            object_mask=m.astype(np.float32),
            gt_motion_field=field.as_tensor().astype(np.float32),
            shaded_rgb=r0.shaded.astype(np.float32),
            gt_transform=tw_i.step_transform(0),
            seed=scene_id,
            step=i,
        ))
    return records


def _worker(scene_index, root_seed, split, scene_cfg, noise_cfg):
    try:
        return generate_scene_records(scene_index, root_seed, split, scene_cfg, noise_cfg)
    except GenerationError as e:
        raise GenerationError(f"scene {scene_index} (root seed {root_seed}): {e}") from e


def generate_dataset(scene_cfg: SceneConfig, noise_cfg: NoiseConfig, count: int, seed: int,
                     out_dir: str, split: str = "train", workers: int = 1,
                     manifest_name: str | None = None) -> Manifest:
    """Generate `count` samples into shards of at most 4096 records.

    Returns the saved Manifest. Deterministic for a fixed seed independent
    of `workers`.
    """
    if split not in _SPLIT_SALTS:
        raise ConfigError(f"split must be one of {sorted(_SPLIT_SALTS)}, got '{split}'")
    os.makedirs(out_dir, exist_ok=True)
    manifest_name = manifest_name or f"{split}.manifest"
    t0 = time.perf_counter()

    manifest = Manifest(
        kind="dataset", split=split, resolution=scene_cfg.resolution, count=count,
        root_seed=seed, config={"scene": scene_cfg.to_dict(), "noise": noise_cfg.to_dict()},
    )

    written = 0
    scene_count = 0
    writer = None
    shard_idx = 0

    def flush():
        nonlocal writer, shard_idx
        if writer is not None and writer.count > 0:
            digest = writer.finalize()
            manifest.shards.append((os.path.basename(writer.path), writer.count, digest))
            shard_idx += 1
            writer = None
        elif writer is not None:
            writer.abort()
            writer = None

    job = functools.partial(_worker, root_seed=seed, split=split,
                            scene_cfg=scene_cfg, noise_cfg=noise_cfg)
    try:
        if workers > 1 and count > 0:
            ctx = multiprocessing.get_context("spawn")
            pool = ctx.Pool(workers)
            stream = pool.imap(job, _counter(), chunksize=2)
        else:
            pool = None
            stream = map(job, _counter())

        if count > 0:
            for records in stream:
                scene_count += 1
                for rec in records:
                    if written >= count:
                        break
                    if writer is None:
                        writer = ShardWriter(os.path.join(out_dir, f"{split}-{shard_idx:05d}.mfk"))
                    writer.append(rec)
                    written += 1
                    if writer.count >= MAX_SHARD_RECORDS:
                        flush()
                if written >= count:
                    break
        flush()
        if pool is not None:
            pool.terminate()
            pool.join()
    except Exception:
        if writer is not None:
            writer.abort()
        raise

    manifest.scene_count = scene_count
    manifest.generation_seconds = round(time.perf_counter() - t0, 3)
    manifest.save(os.path.join(out_dir, manifest_name))
    return manifest


def _counter():
    i = 0
    while True:
        yield i
        i += 1


@dataclass
class DemoTaskConfig:
    """Scripted goal-reaching task: fixed object, camera and goal pose."""

    resolution: int = 64
    fov_deg: float = 48.0
    mesh_kind: str = "composite"
    mesh_dims: tuple = (0.14,)
    mesh_seed: int = 7
    goal_pos: tuple = (0.0, 0.0, 0.55)
    goal_rotvec: tuple = (0.0, 0.0, 0.0)
    start_radius_xy: float = 0.06
    start_z_half_range: float = 0.06
    start_rot_angle: tuple = (0.25, 0.9)   # radians
    gain: float = 0.2
    max_speed: float = 0.05
    max_spin: float = 0.3
    tol_pos: float = 0.002                 # demo termination, meters
    tol_rot_deg: float = 1.0
    success_tol_pos: float = 0.005         # rollout success, meters
    success_tol_rot_deg: float = 3.0
    max_steps: int = 60
    noise_preset: str = "zero"

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in
                ((f, getattr(self, f)) for f in self.__dataclass_fields__)}

    @classmethod
    def from_dict(cls, d: dict) -> "DemoTaskConfig":
        from .config import build_dataclass

        return build_dataclass(cls, d, "task")

    def build(self):
        mesh = make_primitive(self.mesh_kind, self.mesh_dims, self.mesh_seed)
        K = PinholeIntrinsics.from_vfov(self.fov_deg, self.resolution, self.resolution)
        goal = RigidTransform(so3_exp(np.asarray(self.goal_rotvec, dtype=np.float64)),
                              np.asarray(self.goal_pos, dtype=np.float64))
        return mesh, K, goal


def pose_error(pose: RigidTransform, goal: RigidTransform):
    """(position error in meters, rotation error in radians) to the goal."""
    dp = float(np.linalg.norm(goal.t - pose.t))
    dr = float(np.linalg.norm(so3_log(goal.R @ pose.R.T)))
    return dp, dr


def control_twist(pose: RigidTransform, goal: RigidTransform, cfg: DemoTaskConfig) -> Twist:
    """Proportional twist toward the goal, clamped to the actuation limits."""
    w = so3_log(goal.R @ pose.R.T) * cfg.gain
    v = (goal.t - pose.t) * cfg.gain
    wn = np.linalg.norm(w)
    if wn > cfg.max_spin:
        w *= cfg.max_spin / wn
    vn = np.linalg.norm(v)
    if vn > cfg.max_speed:
        v *= cfg.max_speed / vn
    return Twist(v=v, w=w, pivot=pose.t.copy())


def sample_start_pose(rng: np.random.Generator, cfg: DemoTaskConfig,
                      goal: RigidTransform) -> RigidTransform:
    ang = rng.uniform(0.0, 2 * np.pi)
    rad = rng.uniform(0.3, 1.0) * cfg.start_radius_xy
    dz = rng.uniform(-cfg.start_z_half_range, cfg.start_z_half_range)
    t = goal.t + np.array([rad * np.cos(ang), rad * np.sin(ang), dz])
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(*cfg.start_rot_angle)
    R = so3_exp(axis * angle) @ goal.R
    return RigidTransform(R, t)


def generate_demos(task_cfg: DemoTaskConfig, count: int, seed: int, out_dir: str,
                   manifest_name: str = "demos.manifest") -> Manifest:
    """Scripted demonstrations: proportional-control trajectories to the goal.

    Each demo step is stored as a SampleRecord labeled with the executed
    twist's motion field. Demos that do not converge within `max_steps` are
    skipped and counted in the manifest extras.
    """
    os.makedirs(out_dir, exist_ok=True)
    mesh, K, goal = task_cfg.build()
    noise_cfg = NoiseConfig.preset(task_cfg.noise_preset)
    min_mask_px = 64
    t0 = time.perf_counter()

    manifest = Manifest(kind="demos", split="train", resolution=task_cfg.resolution,
                        root_seed=seed, config={"task": task_cfg.to_dict()})
    writer = None
    shard_idx = 0
    written = 0
    demo_lengths = []
    skipped = 0
    episode = 0

    while len(demo_lengths) < count:
        if episode > 20 * max(count, 1) + 100:
            raise GenerationError(f"too many skipped demos ({skipped}); check task config")
        ss = np.random.SeedSequence([int(seed), _SPLIT_SALTS["demos"], episode])
        demo_id = int(ss.generate_state(1, np.uint64)[0])
        rng = np.random.default_rng(ss)
        episode += 1

        pose = sample_start_pose(rng, task_cfg, goal)
        dp, dr = pose_error(pose, goal)
        if dp <= task_cfg.tol_pos and dr <= np.deg2rad(task_cfg.tol_rot_deg):
            skipped += 1  # zero-step demo, nothing to learn from
            continue
        steps = []
        ok = True
        for step_i in range(task_cfg.max_steps):
            tw = control_twist(pose, goal, task_cfg)
            field, flow, r0, r1 = label_sample(mesh, pose, tw, K)
            if r0.mask.sum() < min_mask_px or r1.mask.sum() < min_mask_px:
                ok = False
                break
            m = r0.mask.astype(bool)
            noisy_depth, depth_valid = corrupt_depth(r0.depth, m, noise_cfg, rng)
            noisy_flow, flow_valid = corrupt_flow(flow, m, noise_cfg, rng)
            steps.append(SampleRecord(
                intrinsics=K,
                clean_depth=r0.depth.astype(np.float32),
                noisy_depth=noisy_depth.astype(np.float32),
                depth_valid=depth_valid.astype(np.float32),
                pixel_flow=noisy_flow.astype(np.float32),
                flow_valid=flow_valid.astype(np.float32),
                object_mask=m.astype(np.float32),
                gt_motion_field=field.as_tensor().astype(np.float32),
                shaded_rgb=r0.shaded.astype(np.float32),
                gt_transform=tw.step_transform(0),
                seed=demo_id,
                step=step_i,
            ))
            pose = tw.step_transform(0).compose(pose)
            dp, dr = pose_error(pose, goal)
            if dp <= task_cfg.tol_pos and dr <= np.deg2rad(task_cfg.tol_rot_deg):
                break
        else:
            ok = False
        if not ok or not steps:
            skipped += 1
            continue
        demo_lengths.append(len(steps))
        for rec in steps:
            if writer is None:
                writer = ShardWriter(os.path.join(out_dir, f"demos-{shard_idx:05d}.mfk"))
            writer.append(rec)
            written += 1
            if writer.count >= MAX_SHARD_RECORDS:
                digest = writer.finalize()
                manifest.shards.append((os.path.basename(writer.path), writer.count, digest))
                shard_idx += 1
                writer = None

    if writer is not None and writer.count > 0:
        digest = writer.finalize()
        manifest.shards.append((os.path.basename(writer.path), writer.count, digest))

    manifest.count = written
    manifest.scene_count = len(demo_lengths)
    manifest.generation_seconds = round(time.perf_counter() - t0, 3)
    manifest.extra["skipped_demos"] = str(skipped)
    manifest.extra["median_demo_len"] = str(int(np.median(demo_lengths))) if demo_lengths else "0"
    manifest.save(os.path.join(out_dir, manifest_name))
    return manifest


@functools.lru_cache(maxsize=128)
def _imap_cached(fx, fy, cx, cy, w, h):
    return intrinsics_map(PinholeIntrinsics(fx, fy, cx, cy, w, h)).astype(np.float32)


def imap_for(K: PinholeIntrinsics) -> np.ndarray:
    return _imap_cached(K.f_x, K.f_y, K.c_x, K.c_y, K.width, K.height)


def assemble_input(record: SampleRecord, phase: str, noised_field=None) -> np.ndarray:
    """Build the network input feature map (H, W, C), float32.

    Phase "1" (10 ch): noisy depth x validity, depth validity, pixel flow x
    flow validity (3), flow validity, intrinsics map (4).
    Phase "2-gaussian" (9 ch): rgb x mask (3), depth x mask, mask,
    intrinsics map (4). Phase "2-diffusion" appends the masked noised
    field x_t (4 ch). All channels except the intrinsics map are zero away
    from the object.
    """
    imap = imap_for(record.intrinsics)
    if phase == "1":
        dv = record.depth_valid.astype(np.float32)
        fv = record.flow_valid.astype(np.float32)
        out = np.empty(record.resolution + (PHASE1_CHANNELS,), dtype=np.float32)
        out[..., 0] = record.noisy_depth * dv
        out[..., 1] = dv
        out[..., 2] = record.pixel_flow[..., 0] * fv
        out[..., 3] = record.pixel_flow[..., 1] * fv
        out[..., 4] = record.pixel_flow[..., 2] * fv
        out[..., 5] = fv
        out[..., 6:10] = imap
        return out
    if phase in ("2-gaussian", "2-diffusion"):
        m = record.object_mask.astype(np.float32)
        n = PHASE2_DIFFUSION_CHANNELS if phase == "2-diffusion" else PHASE2_CHANNELS
        out = np.empty(record.resolution + (n,), dtype=np.float32)
        out[..., 0] = record.shaded_rgb[..., 0] * m
        out[..., 1] = record.shaded_rgb[..., 1] * m
        out[..., 2] = record.shaded_rgb[..., 2] * m
        out[..., 3] = record.noisy_depth * m
        out[..., 4] = m
        out[..., 5:9] = imap
        if phase == "2-diffusion":
            if noised_field is None:
                raise ConfigError("phase 2-diffusion requires a noised_field")
            out[..., 9:13] = np.asarray(noised_field, dtype=np.float32) * m[..., None]
        return out
    raise ConfigError(f"unknown phase '{phase}' (use '1', '2-gaussian', '2-diffusion')")
