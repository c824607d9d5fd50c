import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionfield.errors import GeometryError
from motionfield.transforms import RigidTransform, Twist, random_rotation, so3_exp, so3_log


def test_so3_exp_quarter_turn():
    R = so3_exp(np.array([0, 0, np.pi / 2]))
    assert np.allclose(R[:, 0], [0, 1, 0], atol=1e-12)


def test_so3_log_roundtrip():
    rng = np.random.default_rng(0)
    for _ in range(300):
        w = rng.normal(size=3)
        w *= rng.uniform(0, 3.1) / np.linalg.norm(w)
        R = so3_exp(w)
        w2 = so3_log(R)
        assert np.allclose(so3_exp(w2), R, atol=1e-9)


def test_so3_log_near_pi():
    w = np.array([0.0, 0.0, np.pi - 1e-8])
    R = so3_exp(w)
    w2 = so3_log(R)
    assert np.allclose(so3_exp(w2), R, atol=1e-6)


def test_random_rotation_is_rotation():
    rng = np.random.default_rng(1)
    for _ in range(50):
        R = random_rotation(rng)
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(R) - 1) < 1e-12


def test_compose_inverse():
    rng = np.random.default_rng(2)
    for _ in range(50):
        T = RigidTransform(random_rotation(rng), rng.normal(size=3))
        I = T.compose(T.inverse())
        assert I.almost_equal(RigidTransform.identity(), tol=1e-12)


def test_validate_rejects_nonrotation():
    with pytest.raises(GeometryError):
        RigidTransform(np.eye(3) * 1.01, np.zeros(3)).validate()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 6), st.integers(0, 6))
def test_twist_step_consistency(i, j):
    # applying the composite twist i+j steps equals stepping i then j times
    # through the per-step transforms
    from motionfield.scene import apply_twist

    rng = np.random.default_rng(i * 7 + j)
    tw = Twist(v=rng.normal(scale=0.01, size=3), w=rng.normal(scale=0.1, size=3),
               pivot=rng.normal(size=3))
    pose = RigidTransform(random_rotation(rng), rng.normal(size=3))
    direct = apply_twist(pose, tw, i + j)
    stepped = pose
    for k in range(i + j):
        stepped = tw.step_transform(k).compose(stepped)
    assert direct.almost_equal(stepped, tol=1e-9)
