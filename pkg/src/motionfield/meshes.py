"""Triangle meshes: random desk-scale primitives and OBJ/STL loading."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GeometryError, MeshParseError

DIM_MIN = 0.04  # meters; regular daily-object size range
DIM_MAX = 0.20

PRIMITIVE_KINDS = ("box", "cylinder", "sphere", "capsule", "composite")


@dataclass
class TriMesh:
    """Vertices (V, 3) in meters (object frame) and triangle index triples (T, 3)."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.shape[0] < 4:
            raise GeometryError(f"mesh needs at least 4 triangles, got {self.triangles.shape[0]}")
        if not np.isfinite(self.vertices).all():
            raise GeometryError("mesh has non-finite vertex coordinates")
        if self.triangles.min(initial=0) < 0 or self.triangles.max(initial=-1) >= len(self.vertices):
            raise GeometryError("triangle index out of range")

    @property
    def extents(self) -> np.ndarray:
        return self.vertices.max(axis=0) - self.vertices.min(axis=0)

    @property
    def bbox_center(self) -> np.ndarray:
        return 0.5 * (self.vertices.max(axis=0) + self.vertices.min(axis=0))

    def centered(self) -> "TriMesh":
        return TriMesh(self.vertices - self.bbox_center, self.triangles)

    def scaled(self, factor: float) -> "TriMesh":
        return TriMesh(self.vertices * factor, self.triangles)

    def bounding_radius(self) -> float:
        c = self.bbox_center
        return float(np.linalg.norm(self.vertices - c, axis=1).max())


def _merge(meshes) -> TriMesh:
    verts = []
    tris = []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += len(m.vertices)
    return TriMesh(np.vstack(verts), np.vstack(tris))


def _box(sx, sy, sz) -> TriMesh:
    h = np.array([sx, sy, sz]) / 2.0
    corners = np.array(
        [[x, y, z] for x in (-h[0], h[0]) for y in (-h[1], h[1]) for z in (-h[2], h[2])]
    )
    # 12 triangles, outward winding
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    tris = []
    for a, b, c, d in quads:
        tris.append((a, b, c))
        tris.append((a, c, d))
    return TriMesh(corners, np.array(tris))


def _cylinder(radius, height, segments=24) -> TriMesh:
    ang = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.column_stack([ring, np.full(segments, -height / 2)])
    top = np.column_stack([ring, np.full(segments, height / 2)])
    verts = np.vstack([bottom, top, [[0, 0, -height / 2]], [[0, 0, height / 2]]])
    cb, ct = 2 * segments, 2 * segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris.append((i, j, segments + j))
        tris.append((i, segments + j, segments + i))
        tris.append((cb, j, i))
        tris.append((ct, segments + i, segments + j))
    return TriMesh(verts, np.array(tris))


def _icosphere(radius, subdivisions=2) -> TriMesh:
    phi = (1 + np.sqrt(5)) / 2
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        cache = {}
        verts = list(v)

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                m = m / np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(m)
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        v = np.array(verts)
        f = np.array(nf)
    return TriMesh(v * radius, f)


def _capsule(radius, height, segments=16, rings=8) -> TriMesh:
    """Cylinder of length `height` capped with hemispheres, axis +z."""
    sph = _icosphere(radius, 2)
    verts = sph.vertices.copy()
    shift = np.where(verts[:, 2] >= 0, height / 2, -height / 2)
    verts[:, 2] += shift
    return TriMesh(verts, sph.triangles)


def make_primitive(kind: str, dims, seed: int = 0) -> TriMesh:
    """Watertight primitive mesh centered at its bounding-box center.

    `dims` per kind: box (sx, sy, sz); cylinder (radius, height);
    sphere (radius,); capsule (radius, height incl. caps); composite takes
    the overall target extent (s,) and assembles 2-3 overlapping boxes and
    cylinders drawn from `seed`.

    Every resulting extent must land in [0.04, 0.20] m.
    """
    dims = tuple(float(d) for d in np.atleast_1d(dims))
    if kind not in PRIMITIVE_KINDS:
        raise ConfigError(f"unknown primitive kind '{kind}'")

    if kind == "box":
        _check_dims(dims, 3)
        mesh = _box(*dims)
    elif kind == "cylinder":
        _check_dims((2 * dims[0], dims[1]), 2)
        mesh = _cylinder(dims[0], dims[1])
    elif kind == "sphere":
        _check_dims((2 * dims[0],), 1)
        mesh = _icosphere(dims[0], 3)
    elif kind == "capsule":
        r, h = dims[0], dims[1]
        _check_dims((2 * r, h + 2 * r), 2)
        mesh = _capsule(r, h)
    else:  # composite
        s = dims[0]
        _check_dims((s,), 1)
        rng = np.random.default_rng(np.random.SeedSequence([0x636F6D70, seed & 0xFFFFFFFF]))
        parts = []
        for _ in range(int(rng.integers(2, 4))):
            ext = rng.uniform(0.25, 0.9, size=3) * s
            offs = rng.uniform(-0.5, 0.5, size=3) * s * 0.5
            if rng.random() < 0.5:
                part = _box(*ext)
            else:
                part = _cylinder(ext[0] / 2, ext[2])
            parts.append(TriMesh(part.vertices + offs, part.triangles))
        mesh = _merge(parts)
        # rescale the union so the longest extent hits the requested size
        mesh = mesh.centered()
        mesh = mesh.scaled(s / mesh.extents.max())

    return mesh.centered()


def _check_dims(dims, n):
    if len(dims) < n:
        raise ConfigError(f"expected {n} dimensions, got {len(dims)}")
    for d in dims[:n]:
        if not (DIM_MIN <= d <= DIM_MAX):
            raise ConfigError(f"dimension {d:.3f} m outside [{DIM_MIN}, {DIM_MAX}] m")


def random_primitive(rng: np.random.Generator) -> TriMesh:
    """Random primitive with dimensions drawn inside the desk-scale range."""
    kind = PRIMITIVE_KINDS[int(rng.integers(0, len(PRIMITIVE_KINDS)))]
    if kind == "box":
        dims = rng.uniform(DIM_MIN, DIM_MAX, size=3)
    elif kind == "cylinder":
        r = rng.uniform(DIM_MIN / 2, DIM_MAX / 2)
        dims = (r, rng.uniform(max(DIM_MIN, r), DIM_MAX))
    elif kind == "sphere":
        dims = (rng.uniform(DIM_MIN / 2, DIM_MAX / 2),)
    elif kind == "capsule":
        r = rng.uniform(DIM_MIN / 2, DIM_MAX / 4)
        dims = (r, rng.uniform(0.5 * DIM_MIN, DIM_MAX - 2 * r))
    else:
        dims = (rng.uniform(2 * DIM_MIN, DIM_MAX),)
    seed = int(rng.integers(0, 2**31 - 1))
    return make_primitive(kind, dims, seed)


def load_mesh(path: str) -> TriMesh:
    """Load an ASCII OBJ or binary STL file and rescale to desk size.

    If the longest extent falls outside [0.04, 0.20] m the mesh is scaled
    to the nearest bound.
    """
    with open(path, "rb") as fh:
        head = fh.read(5)
    if head[:5] == b"solid":
        mesh = _load_obj_or_ascii_stl(path)
    elif _looks_like_obj(path):
        mesh = _load_obj(path)
    else:
        mesh = _load_stl_binary(path)
    mesh = mesh.centered()
    ext = mesh.extents.max()
    if ext <= 0:
        raise MeshParseError(f"{path}: degenerate mesh with zero extent")
    if ext < DIM_MIN:
        mesh = mesh.scaled(DIM_MIN / ext)
    elif ext > DIM_MAX:
        mesh = mesh.scaled(DIM_MAX / ext)
    return mesh


def _looks_like_obj(path) -> bool:
    try:
        with open(path, "rb") as fh:
            chunk = fh.read(512)
        chunk.decode("utf-8")
    except UnicodeDecodeError:
        return False
    return True


def _load_obj_or_ascii_stl(path):
    # 'solid' can start an ASCII STL; OBJ files never do, so try STL text first
    try:
        return _load_stl_ascii(path)
    except MeshParseError:
        return _load_obj(path)


def _load_obj(path) -> TriMesh:
    verts = []
    faces = []
    with open(path, "r", encoding="utf-8", errors="strict") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError as e:
                    raise MeshParseError(f"{path}:{lineno}: bad vertex: {e}") from None
            elif parts[0] == "f":
                if len(parts) < 4:
                    raise MeshParseError(f"{path}:{lineno}: face needs at least 3 vertices")
                idx = []
                for tok in parts[1:]:
                    ref = tok.split("/")[0]
                    try:
                        i = int(ref)
                    except ValueError:
                        raise MeshParseError(f"{path}:{lineno}: bad face index '{tok}'") from None
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                # fan-triangulate polygons
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
    if not faces:
        raise MeshParseError(f"{path}: no faces found")
    try:
        return TriMesh(np.array(verts), np.array(faces))
    except GeometryError as e:
        raise MeshParseError(f"{path}: {e}") from None


def _load_stl_binary(path) -> TriMesh:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 84:
        raise MeshParseError(f"{path}: truncated STL header at offset {len(data)}")
    (count,) = struct.unpack_from("<I", data, 80)
    expected = 84 + count * 50
    if len(data) != expected:
        raise MeshParseError(
            f"{path}: size mismatch, {count} triangles imply {expected} bytes, file has {len(data)}"
        )
    if count == 0:
        raise MeshParseError(f"{path}: STL contains 0 triangles")
    raw = np.frombuffer(data, dtype=np.uint8, count=count * 50, offset=84)
    tri = raw.reshape(count, 50)[:, 12:48].copy().view("<f4").reshape(count, 3, 3)
    verts = tri.reshape(-1, 3).astype(np.float64)
    faces = np.arange(3 * count).reshape(count, 3)
    try:
        return TriMesh(verts, faces)
    except GeometryError as e:
        raise MeshParseError(f"{path}: {e}") from None


def _load_stl_ascii(path) -> TriMesh:
    verts = []
    with open(path, "r", encoding="utf-8") as fh:
        in_solid = False
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "solid":
                in_solid = True
            elif parts[0] == "vertex":
                if len(parts) < 4:
                    raise MeshParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] not in (
                "facet", "outer", "endloop", "endfacet", "endsolid", "normal", "loop",
            ) and in_solid:
                raise MeshParseError(f"{path}:{lineno}: unexpected token '{parts[0]}'")
    if not verts or len(verts) % 3 != 0:
        raise MeshParseError(f"{path}: not a valid ASCII STL")
    verts = np.array(verts)
    faces = np.arange(len(verts)).reshape(-1, 3)
    try:
        return TriMesh(verts, faces)
    except GeometryError as e:
        raise MeshParseError(f"{path}: {e}") from None
