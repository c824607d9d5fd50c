import time

import numpy as np
import pytest

from motionfield.errors import DegenerateFitError, GeometryError, RansacFailedError
from motionfield.registration import (
    CorrespondentClouds,
    RansacConfig,
    field_to_clouds,
    jacobi_eigh_sym3,
    kabsch,
    pose_errors,
    ransac_rigid,
    to_base_frame,
)
from motionfield.transforms import RigidTransform, random_rotation, so3_exp


def _random_transform(rng):
    return RigidTransform(random_rotation(rng), rng.uniform(-0.2, 0.2, size=3))


def test_jacobi_matches_numpy_eigh():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(500, 3, 3))
    S = A @ np.swapaxes(A, 1, 2)
    vals, vecs = jacobi_eigh_sym3(S)
    ref = np.sort(np.linalg.eigvalsh(S), axis=-1)[:, ::-1]
    assert np.abs(vals - ref).max() < 1e-10
    recon = vecs @ (vals[..., None] * np.swapaxes(vecs, 1, 2))
    assert np.abs(recon - S).max() < 1e-9


def test_kabsch_identity():
    rng = np.random.default_rng(1)
    p = rng.normal(size=(50, 3))
    T, rms = kabsch(CorrespondentClouds(p, p.copy()))
    assert np.abs(T.R - np.eye(3)).max() < 1e-12
    assert np.abs(T.t).max() < 1e-12
    assert rms < 1e-12


def test_kabsch_cube_rotation():
    cube = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    Rz = so3_exp(np.array([0, 0, np.pi / 2]))
    moved = cube @ Rz.T + np.array([0.1, 0, 0])
    T, rms = kabsch(CorrespondentClouds(cube, moved))
    assert np.abs(T.R - Rz).max() < 1e-12
    assert np.abs(T.t - [0.1, 0, 0]).max() < 1e-12
    assert rms < 1e-12


def test_kabsch_recovers_random_transforms():
    rng = np.random.default_rng(2)
    for _ in range(100):
        T_true = _random_transform(rng)
        p0 = rng.normal(size=(30, 3)) * 0.1
        p1 = T_true.apply(p0)
        T, rms = kabsch(CorrespondentClouds(p0, p1))
        assert np.abs(T.R - T_true.R).max() < 1e-9
        assert np.abs(T.t - T_true.t).max() < 1e-9
        assert rms < 1e-9


def test_kabsch_reflection_gets_proper_rotation():
    # planar points negated: the fit must stay a proper rotation. For planar
    # clouds -P0 is exactly a 180-degree flip about the normal, residual 0.
    rng = np.random.default_rng(3)
    p0 = np.column_stack([rng.normal(size=(40, 2)), np.zeros(40)])
    T, rms = kabsch(CorrespondentClouds(p0, -p0))
    assert abs(np.linalg.det(T.R) - 1.0) < 1e-9
    assert np.abs(T.R.T @ T.R - np.eye(3)).max() < 1e-9
    assert rms < 1e-12


def test_kabsch_true_reflection_residual_positive():
    # a non-planar cloud mirrored across z cannot be matched by any proper
    # rotation; det +1 is enforced and the answer beats a brute-force
    # rotation search
    p0 = np.array([[0.1, 0.0, 0.0], [0.0, 0.12, 0.0], [0.0, 0.0, 0.15], [0.05, 0.05, 0.05]])
    p1 = p0 * np.array([1.0, 1.0, -1.0])
    T, rms = kabsch(CorrespondentClouds(p0, p1))
    assert abs(np.linalg.det(T.R) - 1.0) < 1e-9
    assert rms > 1e-3

    def cost(R):
        c0 = p0.mean(axis=0)
        c1 = p1.mean(axis=0)
        r = (p0 - c0) @ R.T - (p1 - c1)
        return np.sum(r * r)

    rng = np.random.default_rng(12)
    best_random = min(cost(random_rotation(rng)) for _ in range(20000))
    assert cost(T.R) <= best_random + 1e-12


def test_kabsch_optimality_under_noise():
    # no small random SE(3) perturbation beats the closed-form answer
    rng = np.random.default_rng(4)
    for _ in range(50):
        T_true = _random_transform(rng)
        p0 = rng.normal(size=(60, 3)) * 0.1
        p1 = T_true.apply(p0) + rng.normal(scale=0.002, size=(60, 3))
        T, rms = kabsch(CorrespondentClouds(p0, p1))

        def cost(Tx):
            r = Tx.apply(p0) - p1
            return np.sum(r * r)

        base = cost(T)
        for _ in range(20):
            dw = rng.normal(scale=1e-3, size=3)
            dt = rng.normal(scale=1e-4, size=3)
            Tp = RigidTransform(so3_exp(dw) @ T.R, T.t + dt)
            assert cost(Tp) >= base - 1e-15


def test_kabsch_degenerate():
    line = np.outer(np.linspace(0, 1, 10), np.array([1.0, 2.0, 3.0]))
    with pytest.raises(DegenerateFitError):
        kabsch(CorrespondentClouds(line, line + 0.1))
    with pytest.raises(DegenerateFitError):
        kabsch(CorrespondentClouds(np.zeros((2, 3)), np.zeros((2, 3))))


def test_kabsch_weighted():
    rng = np.random.default_rng(5)
    T_true = _random_transform(rng)
    p0 = rng.normal(size=(100, 3)) * 0.1
    p1 = T_true.apply(p0)
    p1[:30] += 0.5  # corrupted block gets zero weight
    w = np.ones(100)
    w[:30] = 0.0
    T, _ = kabsch(CorrespondentClouds(p0, p1, weights=w))
    assert np.abs(T.R - T_true.R).max() < 1e-9


def test_ransac_clean_matches_kabsch():
    rng = np.random.default_rng(6)
    T_true = _random_transform(rng)
    p0 = rng.normal(size=(300, 3)) * 0.1
    p1 = T_true.apply(p0)
    clouds = CorrespondentClouds(p0, p1)
    T_k, _ = kabsch(clouds)
    T_r, inl = ransac_rigid(clouds)
    assert np.abs(T_r.R - T_k.R).max() < 1e-9
    assert np.abs(T_r.t - T_k.t).max() < 1e-9
    assert inl.all()


def test_ransac_30pct_outliers():
    rng = np.random.default_rng(7)
    T_true = _random_transform(rng)
    p0 = rng.normal(size=(1000, 3)) * 0.1
    p1 = T_true.apply(p0)
    n_out = 300
    out_idx = rng.choice(1000, size=n_out, replace=False)
    p1[out_idx] += rng.uniform(0.05, 0.5, size=(n_out, 3)) * rng.choice([-1, 1], size=(n_out, 3))
    T, inliers = ransac_rigid(CorrespondentClouds(p0, p1), RansacConfig(seed=0))
    assert np.abs(T.R - T_true.R).max() < 1e-6
    assert np.abs(T.t - T_true.t).max() < 1e-6
    true_inliers = np.ones(1000, dtype=bool)
    true_inliers[out_idx] = False
    assert (inliers | ~true_inliers).all()  # inlier set contains all true inliers


def test_ransac_determinism():
    rng = np.random.default_rng(8)
    p0 = rng.normal(size=(200, 3))
    p1 = p0 + rng.normal(scale=0.01, size=(200, 3))
    T1, m1 = ransac_rigid(CorrespondentClouds(p0, p1), RansacConfig(seed=42))
    T2, m2 = ransac_rigid(CorrespondentClouds(p0, p1), RansacConfig(seed=42))
    assert np.array_equal(T1.R, T2.R) and np.array_equal(T1.t, T2.t)
    assert np.array_equal(m1, m2)


def test_ransac_failure_signal():
    rng = np.random.default_rng(9)
    p0 = rng.normal(size=(50, 3))
    p1 = rng.normal(size=(50, 3)) * 5  # no rigid consensus at 5mm
    with pytest.raises(RansacFailedError):
        ransac_rigid(CorrespondentClouds(p0, p1), RansacConfig(iters=20, seed=1))


def test_ransac_throughput_2000_points():
    rng = np.random.default_rng(10)
    T_true = _random_transform(rng)
    p0 = rng.normal(size=(2000, 3)) * 0.1
    p1 = T_true.apply(p0) + rng.normal(scale=0.001, size=(2000, 3))
    clouds = CorrespondentClouds(p0, p1)
    ransac_rigid(clouds, RansacConfig(seed=0))  # warm caches
    n = 30
    t0 = time.perf_counter()
    for i in range(n):
        ransac_rigid(clouds, RansacConfig(seed=i))
    dt = time.perf_counter() - t0
    rate = n / dt
    print(f"ransac_rigid: {rate:.0f} solves/s at 2000 points")
    assert rate >= 300


def test_to_base_frame():
    rng = np.random.default_rng(11)
    T_o = _random_transform(rng)
    T_bc = _random_transform(rng)
    assert to_base_frame(T_o, RigidTransform.identity()).almost_equal(T_o)
    Ta = to_base_frame(RigidTransform.identity(), T_bc)
    assert Ta.almost_equal(RigidTransform.identity(), tol=1e-12)
    # conjugation inverse round trip
    T_a = to_base_frame(T_o, T_bc)
    back = T_bc.inverse().compose(T_a).compose(T_bc)
    assert back.almost_equal(T_o, tol=1e-12)


def test_pose_errors():
    T = RigidTransform.identity()
    assert pose_errors(T, T) == (0.0, 0.0)
    Rz = so3_exp(np.array([0, 0, np.pi]))
    t_mse, r_f = pose_errors(RigidTransform(Rz, np.zeros(3)), T)
    assert abs(r_f - 2 * np.sqrt(2)) < 1e-12
    t_mse, _ = pose_errors(RigidTransform(np.eye(3), [0.003, 0, 0]), T)
    assert abs(t_mse - 3e-6) < 1e-18


def test_field_to_clouds():
    from motionfield.camera import PinholeIntrinsics

    K = PinholeIntrinsics(100, 100, 16, 16, 32, 32)
    field = np.zeros((32, 32, 4))
    field[..., 0] = 0.5
    field[..., 3] = 0.01
    mask = np.zeros((32, 32), dtype=bool)
    mask[10:20, 10:20] = True
    clouds = field_to_clouds(field, mask, K)
    assert len(clouds) == 100
    assert np.allclose(clouds.p1 - clouds.p0, [0, 0, 0.01])
    with pytest.raises(GeometryError):
        field_to_clouds(field, np.zeros((32, 32), dtype=bool), K)
