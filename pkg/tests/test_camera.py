import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionfield.camera import (
    PinholeIntrinsics,
    depth_sensitivity,
    intrinsics_map,
    motion_differential,
    pixel_grid,
    project,
    unproject,
)
from motionfield.errors import GeometryError

K100 = PinholeIntrinsics(100, 100, 128, 128, 256, 256)
K600 = PinholeIntrinsics(600, 600, 320, 240, 640, 480)


def test_project_principal_axis():
    assert np.allclose(project([0, 0, 1], K100), [128, 128])


def test_project_hand_arithmetic():
    # u = 100*2/2 + 128 = 228
    assert np.allclose(project([2, 0, 2], K100), [228, 128])
    assert np.allclose(project([0.05, -0.05, 0.5], K600), [380, 180])


def test_unproject_examples():
    assert np.allclose(unproject([128, 128], 1.0, K100), [0, 0, 1])
    assert np.allclose(unproject([228, 128], 2.0, K100), [2, 0, 2])
    assert np.allclose(unproject([380, 180], 0.5, K600), [0.05, -0.05, 0.5])


def test_project_rejects_nonpositive_depth():
    with pytest.raises(GeometryError):
        project([0, 0, 0], K100)
    with pytest.raises(GeometryError):
        unproject([10, 10], -0.5, K100)


def test_roundtrip_bulk():
    rng = np.random.default_rng(0)
    z = rng.uniform(0.2, 2.0, size=10000)
    x = rng.uniform(-0.5, 0.5, size=10000) * z
    y = rng.uniform(-0.5, 0.5, size=10000) * z
    p = np.stack([x, y, z], axis=-1)
    back = unproject(project(p, K600), z, K600)
    assert np.abs(back - p).max() < 1e-9


@settings(max_examples=200, deadline=None)
@given(
    z=st.floats(0.2, 2.0),
    xf=st.floats(-0.6, 0.6),
    yf=st.floats(-0.6, 0.6),
    f=st.floats(50, 1200),
)
def test_roundtrip_property(z, xf, yf, f):
    K = PinholeIntrinsics(f, f * 1.01, 320, 240, 640, 480)
    p = np.array([xf * z, yf * z, z])
    assert np.abs(unproject(project(p, K), z, K) - p).max() < 1e-9


def test_intrinsics_map_values():
    m = intrinsics_map(K100)
    grid = pixel_grid(K100)
    assert np.allclose(m[..., 0], (grid[..., 1] - 128) / 100)
    assert np.allclose(m[..., 1], (grid[..., 0] - 128) / 100)
    # constant channels
    assert np.allclose(m[..., 2], 256.0 / 100)
    assert np.allclose(m[..., 3], 256.0 / 100)
    # channel 0 constant along x, channel 1 constant along y
    assert np.ptp(m[..., 0], axis=1).max() == 0
    assert np.ptp(m[..., 1], axis=0).max() == 0


def test_intrinsics_map_zero_at_principal_point():
    # principal point on a pixel center: both coordinate channels vanish there
    K = PinholeIntrinsics(100, 100, 128.5, 64.5, 256, 256)
    m = intrinsics_map(K)
    assert m[64, 128, 0] == 0.0
    assert m[64, 128, 1] == 0.0


def test_intrinsics_map_unit_when_f_matches_s():
    K = PinholeIntrinsics(256, 256, 128, 128, 256, 256)
    m = intrinsics_map(K)
    assert np.allclose(m[..., 2], 1.0)
    assert np.allclose(m[..., 3], 1.0)


def test_intrinsics_map_one_focal_length_right_of_center():
    # at u = c_x + f_x the normalized x coordinate is exactly 1
    K = PinholeIntrinsics(100, 100, 20.5, 128, 256, 256)
    m = intrinsics_map(K)
    # c_x + f_x = 120.5, the center of pixel column 120
    assert m[0, 120, 1] == 1.0


def test_map_matches_motion_differential():
    # Eq-consistency: dX = Z dx (ch3 / s) + dZ ch1 evaluated from the map
    K = PinholeIntrinsics(309.02, 309.02, 32, 32, 64, 64)
    m = intrinsics_map(K)
    grid = pixel_grid(K)
    rng = np.random.default_rng(1)
    for _ in range(100):
        j = rng.integers(0, 64)
        i = rng.integers(0, 64)
        Z = rng.uniform(0.2, 1.5)
        dx = rng.uniform(-3, 3)
        dZ = rng.uniform(-0.01, 0.01)
        x = grid[j, i, 0]
        want = motion_differential(Z, dx, dZ, x, K)
        got = Z * dx * (m[j, i, 3] / 256.0) + dZ * m[j, i, 1]
        assert abs(want - got) < 1e-12


def test_motion_differential_examples():
    K = PinholeIntrinsics(100, 100, 128, 128, 256, 256)
    assert motion_differential(1.0, 0, 0, 50, K) == 0
    assert abs(motion_differential(1.0, 1, 0, 50, K) - 0.01) < 1e-15
    assert motion_differential(1.0, 0, 0.1, 128.0, K) == 0


def test_depth_sensitivity_examples():
    assert abs(depth_sensitivity(0.6, 600, 0.05, 1) - (-0.012)) < 1e-12
    assert depth_sensitivity(0.6, 600, 0.05, 0) == 0
    assert abs(depth_sensitivity(0.5, 600, 0.05, 1) - (-1.0 / 120)) < 1e-9


def test_depth_sensitivity_singularity():
    with pytest.raises(GeometryError):
        depth_sensitivity(0.5, 600, 0.0, 1)


def test_depth_sensitivity_matches_exact_difference():
    # oracle: exact depth solving the perturbed pixel equation
    rng = np.random.default_rng(2)
    checked = 0
    for _ in range(500):
        Z = rng.uniform(0.3, 1.5)
        f = rng.uniform(100, 900)
        X = rng.uniform(0.02, 0.3) * rng.choice([-1, 1])
        dxp = rng.uniform(-2, 2)
        denom = f * X / Z + dxp
        if abs(denom) < 1e-9:
            continue
        exact = f * X / denom - Z
        if abs(exact / Z) >= 0.02:
            continue
        approx = depth_sensitivity(Z, f, X, dxp)
        if exact == 0.0:
            assert approx == 0.0
            continue
        assert abs(approx - exact) / abs(exact) < 0.05
        checked += 1
    assert checked > 200
