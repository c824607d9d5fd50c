"""Object-centric 3D motion fields: synthesis, estimation, and SE(3) recovery.

The package covers the full desk-scale pipeline: synthesizing noisy RGBD /
pixel-flow observations with exact motion-field labels, training a
denoising dual-head UNet estimator and a masked-diffusion motion-field
policy on them, and recovering rigid actions from predicted fields with
Kabsch + RANSAC.
"""

__version__ = "0.1.0"

from .camera import PinholeIntrinsics, depth_sensitivity, intrinsics_map, motion_differential, project, unproject
from .meshes import TriMesh, load_mesh, make_primitive
from .noise import NoiseConfig, corrupt_depth, corrupt_flow, filtered_gaussian, subset_mask
from .records import Manifest, SampleRecord, read_shard, write_shard
from .registration import (
    CorrespondentClouds,
    RansacConfig,
    field_to_clouds,
    kabsch,
    pose_errors,
    ransac_rigid,
    to_base_frame,
)
from .render import RenderOutput, raycast
from .scene import MotionField, SceneConfig, apply_twist, label_sample, sample_scene, simulate_rollout_step
from .transforms import RigidTransform, Twist
from .direct import direct_motion_field
from .datasets import DemoTaskConfig, assemble_input, generate_dataset, generate_demos

__all__ = [
    "PinholeIntrinsics", "project", "unproject", "intrinsics_map", "depth_sensitivity",
    "motion_differential", "TriMesh", "make_primitive", "load_mesh", "NoiseConfig",
    "filtered_gaussian", "corrupt_depth", "corrupt_flow", "subset_mask", "SampleRecord",
    "Manifest", "write_shard", "read_shard", "RigidTransform", "Twist", "MotionField",
    "SceneConfig", "sample_scene", "apply_twist", "label_sample", "simulate_rollout_step",
    "RenderOutput", "raycast", "CorrespondentClouds", "kabsch", "ransac_rigid", "RansacConfig",
    "field_to_clouds", "to_base_frame", "pose_errors", "direct_motion_field",
    "generate_dataset", "generate_demos", "DemoTaskConfig", "assemble_input",
]
