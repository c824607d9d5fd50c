"""Binary sample records, shard files, and the dataset manifest.

Record layout (little-endian), fixed per resolution so shards can be
memory-mapped and sliced without parsing:

    magic "MFK1" | u32 version | u16 H | u16 W | f64 x 6 intrinsics
    | 15 float32 planes, row-major:
        clean_depth, noisy_depth, depth_valid, flow_u, flow_v, flow_z,
        flow_valid, mask, gt_depth, gt_motion_x, gt_motion_y, gt_motion_z,
        rgb_r, rgb_g, rgb_b
    | f64 x 12 gt_transform (R row-major, then t) | u64 seed | u32 step

A shard is a small header, a run of records of one resolution, and a
trailing SHA-256 over everything before it.
"""

from __future__ import annotations

import hashlib
import os
import struct
import time
from dataclasses import dataclass, field
from typing import Iterable, List, Optional

import numpy as np

from .camera import PinholeIntrinsics
from .errors import IntegrityError
from .transforms import RigidTransform

RECORD_MAGIC = b"MFK1"
SHARD_MAGIC = b"MFKS"
FORMAT_VERSION = 1
MAX_SHARD_RECORDS = 4096

PLANES = (
    "clean_depth", "noisy_depth", "depth_valid",
    "flow_u", "flow_v", "flow_z", "flow_valid", "mask",
    "gt_depth", "gt_motion_x", "gt_motion_y", "gt_motion_z",
    "rgb_r", "rgb_g", "rgb_b",
)
N_PLANES = len(PLANES)
_REC_HEADER = struct.Struct("<4sIHH6d")      # 60 bytes
_REC_FOOTER = struct.Struct("<12dQI")        # 108 bytes
_SHARD_HEADER = struct.Struct("<4sIIHH")     # 16 bytes


def record_nbytes(h: int, w: int) -> int:
    return _REC_HEADER.size + N_PLANES * h * w * 4 + _REC_FOOTER.size


@dataclass
class SampleRecord:
    """One training sample; all images share (H, W)."""

    intrinsics: PinholeIntrinsics
    clean_depth: np.ndarray
    noisy_depth: np.ndarray
    depth_valid: np.ndarray
    pixel_flow: np.ndarray      # (H, W, 3) noisy (du, dv, dz)
    flow_valid: np.ndarray
    object_mask: np.ndarray
    gt_motion_field: np.ndarray  # (H, W, 4)
    shaded_rgb: np.ndarray       # (H, W, 3)
    gt_transform: RigidTransform
    seed: int = 0
    step: int = 0

    @property
    def resolution(self):
        return self.clean_depth.shape

    def planes(self) -> np.ndarray:
        """(15, H, W) float32 view of all image planes in file order."""
        h, w = self.resolution
        out = np.empty((N_PLANES, h, w), dtype="<f4")
        out[0] = self.clean_depth
        out[1] = self.noisy_depth
        out[2] = self.depth_valid
        out[3] = self.pixel_flow[..., 0]
        out[4] = self.pixel_flow[..., 1]
        out[5] = self.pixel_flow[..., 2]
        out[6] = self.flow_valid
        out[7] = self.object_mask
        out[8] = self.gt_motion_field[..., 0]
        out[9] = self.gt_motion_field[..., 1]
        out[10] = self.gt_motion_field[..., 2]
        out[11] = self.gt_motion_field[..., 3]
        out[12] = self.shaded_rgb[..., 0]
        out[13] = self.shaded_rgb[..., 1]
        out[14] = self.shaded_rgb[..., 2]
        return out

    def to_bytes(self) -> bytes:
        h, w = self.resolution
        head = _REC_HEADER.pack(RECORD_MAGIC, FORMAT_VERSION, h, w,
                                *self.intrinsics.to_array())
        body = self.planes().tobytes()
        tr = np.concatenate([self.gt_transform.R.reshape(9), self.gt_transform.t])
        foot = _REC_FOOTER.pack(*tr, self.seed, self.step)
        return head + body + foot

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> "SampleRecord":
        magic, version, h, w, fx, fy, cx, cy, width, height = _REC_HEADER.unpack_from(buf, offset)
        if magic != RECORD_MAGIC:
            raise IntegrityError(f"bad record magic at offset {offset}")
        if version != FORMAT_VERSION:
            raise IntegrityError(f"unsupported record version {version}")
        K = PinholeIntrinsics(fx, fy, cx, cy, int(width), int(height))
        pofs = offset + _REC_HEADER.size
        planes = np.frombuffer(buf, dtype="<f4", count=N_PLANES * h * w, offset=pofs)
        planes = planes.reshape(N_PLANES, h, w).copy()
        fofs = pofs + N_PLANES * h * w * 4
        foot = _REC_FOOTER.unpack_from(buf, fofs)
        R = np.array(foot[:9]).reshape(3, 3)
        t = np.array(foot[9:12])
        return cls(
            intrinsics=K,
            clean_depth=planes[0], noisy_depth=planes[1], depth_valid=planes[2],
            pixel_flow=np.stack([planes[3], planes[4], planes[5]], axis=-1),
            flow_valid=planes[6], object_mask=planes[7],
            gt_motion_field=np.stack(list(planes[8:12]), axis=-1),
            shaded_rgb=np.stack(list(planes[12:15]), axis=-1),
            gt_transform=RigidTransform(R, t),
            seed=int(foot[12]), step=int(foot[13]),
        )


class ShardWriter:
    """Incremental shard writer with O(1) memory; finalize() seals the file."""

    def __init__(self, path: str):
        self.path = path
        self._tmp = path + ".tmp"
        self._fh = open(self._tmp, "wb")
        self._fh.write(b"\x00" * _SHARD_HEADER.size)  # rewritten once the count is known
        self._sha = hashlib.sha256()
        self.count = 0
        self._hw = None

    def append(self, rec: SampleRecord):
        if self._hw is None:
            self._hw = rec.resolution
        elif rec.resolution != self._hw:
            self.abort()
            raise IntegrityError("records in one shard must share a resolution")
        blob = rec.to_bytes()
        self._sha.update(blob)
        self._fh.write(blob)
        self.count += 1

    def finalize(self) -> str:
        if self.count == 0:
            self.abort()
            raise IntegrityError("refusing to write an empty shard")
        h, w = self._hw
        header = _SHARD_HEADER.pack(SHARD_MAGIC, FORMAT_VERSION, self.count, h, w)
        full = hashlib.sha256(header)
        full.update(self._sha.digest())
        digest = full.digest()
        self._fh.write(digest)
        self._fh.seek(0)
        self._fh.write(header)
        self._fh.close()
        os.replace(self._tmp, self.path)
        return digest.hex()

    def abort(self):
        self._fh.close()
        if os.path.exists(self._tmp):
            os.unlink(self._tmp)


def write_shard(records: Iterable[SampleRecord], path: str) -> str:
    """Write records into one shard file; returns the hex SHA-256 checksum.

    Records must be non-empty and share one resolution. The file is written
    to a temp name and renamed, so partial shards are never left behind.
    """
    writer = ShardWriter(path)
    try:
        for rec in records:
            writer.append(rec)
    except Exception:
        writer.abort()
        raise
    return writer.finalize()


class ShardReader:
    """Zero-parse reader over a memory-mapped shard."""

    def __init__(self, path: str):
        self.path = path
        size = os.path.getsize(path)
        if size < _SHARD_HEADER.size + 32:
            raise IntegrityError(f"{path}: file too small to be a shard")
        self._mm = np.memmap(path, dtype=np.uint8, mode="r")
        magic, version, count, h, w = _SHARD_HEADER.unpack_from(self._mm[: _SHARD_HEADER.size])
        if magic != SHARD_MAGIC:
            raise IntegrityError(f"{path}: bad shard magic")
        if version != FORMAT_VERSION:
            raise IntegrityError(f"{path}: unsupported version {version}")
        self.count = count
        self.h = h
        self.w = w
        self._rec_size = record_nbytes(h, w)
        expected = _SHARD_HEADER.size + count * self._rec_size + 32
        if size != expected:
            raise IntegrityError(f"{path}: size {size} != expected {expected} (truncated?)")

    def verify_checksum(self) -> str:
        """Recompute sha256(header || sha256(records)) and compare to the trailer."""
        end = len(self._mm) - 32
        body_sha = hashlib.sha256()
        for off in range(_SHARD_HEADER.size, end, 1 << 24):
            body_sha.update(self._mm[off : min(off + (1 << 24), end)])
        full = hashlib.sha256(bytes(self._mm[: _SHARD_HEADER.size]))
        full.update(body_sha.digest())
        if full.digest() != bytes(self._mm[-32:]):
            raise IntegrityError(f"{self.path}: checksum mismatch")
        return full.hexdigest()

    def _rec_offset(self, i: int) -> int:
        if not 0 <= i < self.count:
            raise IndexError(i)
        return _SHARD_HEADER.size + i * self._rec_size

    def record(self, i: int) -> SampleRecord:
        off = self._rec_offset(i)
        return SampleRecord.from_bytes(self._mm, off)

    def plane(self, i: int, name: str) -> np.ndarray:
        """Single (H, W) float32 plane of record i, copied out of the map."""
        p = PLANES.index(name)
        off = self._rec_offset(i) + _REC_HEADER.size + p * self.h * self.w * 4
        raw = self._mm[off : off + self.h * self.w * 4]
        return raw.view("<f4").reshape(self.h, self.w).copy()

    def planes_block(self, i: int) -> np.ndarray:
        """(15, H, W) float32 planes of record i (copy)."""
        off = self._rec_offset(i) + _REC_HEADER.size
        raw = self._mm[off : off + N_PLANES * self.h * self.w * 4]
        return raw.view("<f4").reshape(N_PLANES, self.h, self.w).copy()

    def transform(self, i: int) -> RigidTransform:
        off = self._rec_offset(i) + _REC_HEADER.size + N_PLANES * self.h * self.w * 4
        foot = _REC_FOOTER.unpack_from(self._mm, off)
        return RigidTransform(np.array(foot[:9]).reshape(3, 3), np.array(foot[9:12]))

    def intrinsics(self, i: int) -> PinholeIntrinsics:
        off = self._rec_offset(i)
        vals = _REC_HEADER.unpack_from(self._mm, off)
        return PinholeIntrinsics(vals[4], vals[5], vals[6], vals[7], int(vals[8]), int(vals[9]))

    def scene_seed(self, i: int) -> int:
        off = self._rec_offset(i) + _REC_HEADER.size + N_PLANES * self.h * self.w * 4
        foot = _REC_FOOTER.unpack_from(self._mm, off)
        return int(foot[12])


def read_shard(path: str) -> List[SampleRecord]:
    """Load and checksum-verify a whole shard."""
    reader = ShardReader(path)
    reader.verify_checksum()
    return [reader.record(i) for i in range(reader.count)]


@dataclass
class Manifest:
    """Human-readable dataset index: one key per line plus a shard table."""

    kind: str = "dataset"            # dataset | demos
    split: str = "train"
    resolution: int = 64
    count: int = 0
    scene_count: int = 0
    root_seed: int = 0
    generation_seconds: float = 0.0
    config: dict = field(default_factory=dict)
    shards: list = field(default_factory=list)  # (filename, count, sha256 hex)
    extra: dict = field(default_factory=dict)

    def validate(self):
        total = sum(c for _, c, _ in self.shards)
        if total != self.count:
            raise IntegrityError(f"shard counts sum to {total}, manifest says {self.count}")

    def save(self, path: str):
        self.validate()
        from .config import flatten

        lines = [f"format_version {FORMAT_VERSION}"]
        for key in ("kind", "split", "resolution", "count", "scene_count",
                    "root_seed", "generation_seconds"):
            lines.append(f"{key} {getattr(self, key)}")
        for k, v in sorted(self.extra.items()):
            lines.append(f"extra.{k} {v}")
        for k, v in sorted(flatten(self.config).items()):
            lines.append(f"config.{k} {v!r}")
        for name, count, digest in self.shards:
            lines.append(f"shard {name} {count} {digest}")
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "Manifest":
        from .config import unflatten

        m = cls()
        flat_cfg = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                key, _, value = line.partition(" ")
                if key == "format_version":
                    if int(value) != FORMAT_VERSION:
                        raise IntegrityError(f"{path}:{lineno}: unsupported version {value}")
                elif key == "shard":
                    name, cnt, digest = value.split()
                    m.shards.append((name, int(cnt), digest))
                elif key.startswith("config."):
                    import ast

                    flat_cfg[key[len("config."):]] = ast.literal_eval(value)
                elif key.startswith("extra."):
                    m.extra[key[len("extra."):]] = value
                elif key in ("kind", "split"):
                    setattr(m, key, value)
                elif key in ("resolution", "count", "scene_count", "root_seed"):
                    setattr(m, key, int(value))
                elif key == "generation_seconds":
                    m.generation_seconds = float(value)
                else:
                    raise IntegrityError(f"{path}:{lineno}: unknown manifest key '{key}'")
        m.config = unflatten(flat_cfg)
        m.validate()
        return m

    def shard_paths(self, manifest_path: str) -> list:
        base = os.path.dirname(os.path.abspath(manifest_path))
        return [os.path.join(base, name) for name, _, _ in self.shards]

    def open_readers(self, manifest_path: str, verify: bool = False) -> list:
        readers = []
        for (name, count, digest), path in zip(self.shards, self.shard_paths(manifest_path)):
            r = ShardReader(path)
            if r.count != count:
                raise IntegrityError(f"{name}: manifest says {count} records, shard has {r.count}")
            if verify and r.verify_checksum() != digest:
                raise IntegrityError(f"{name}: checksum differs from manifest")
            readers.append(r)
        return readers
