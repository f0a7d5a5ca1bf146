import numpy as np
import pytest

from dipmotion import rotmath as rm


def test_aa_to_mat_quarter_turn_z():
    # oracle: Rz(pi/2) maps x->y, y->-x
    R = rm.aa_to_mat(np.array([0.0, 0.0, np.pi / 2]))
    expect = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(R, expect, atol=1e-15)


def test_aa_to_mat_x_axis():
    R = rm.aa_to_mat(np.array([np.pi / 2, 0.0, 0.0]))
    expect = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    assert np.allclose(R, expect, atol=1e-15)


@pytest.mark.parametrize("scale", [1e-12, 1e-8, 1e-4, 0.19, 0.21, 1.0, 2.0,
                                   3.0, np.pi - 1e-3])
def test_roundtrip_magnitudes(scale):
    rng = np.random.default_rng(3)
    v = rng.standard_normal((50, 3))
    v = v / np.linalg.norm(v, axis=1, keepdims=True) * scale
    back = rm.mat_to_aa(rm.aa_to_mat(v))
    assert np.max(np.abs(back - v)) < 5e-8


def test_half_turn_axis_recovery():
    aa = rm.mat_to_aa(rm.aa_to_mat(np.array([0.0, 0.0, np.pi])))
    assert np.allclose(np.abs(aa), [0.0, 0.0, np.pi], atol=1e-7)


def test_mat_to_aa_rejects_non_rotation():
    with pytest.raises(ValueError):
        rm.mat_to_aa(np.eye(3) * 1.5)


def test_is_rotation():
    assert rm.is_rotation(np.eye(3))
    assert not rm.is_rotation(np.eye(3) * 2.0)


def test_rotation_jacobian_matches_fd():
    rng = np.random.default_rng(5)
    for aa in rng.standard_normal((5, 3)):
        J = rm.rotation_jacobian(aa)
        eps = 1e-6
        for i in range(3):
            d = np.zeros(3)
            d[i] = eps
            fd = (rm.aa_to_mat(aa + d) - rm.aa_to_mat(aa - d)) / (2 * eps)
            assert np.max(np.abs(J[i] - fd)) < 5e-7


def test_rotation_jacobian_dir_matches_fd():
    # directional derivative of the jacobian itself (second order term)
    rng = np.random.default_rng(6)
    for _ in range(5):
        aa = rng.standard_normal(3)
        d = rng.standard_normal(3)
        eps = 1e-6
        fd = (rm.rotation_jacobian(aa + eps * d)
              - rm.rotation_jacobian(aa - eps * d)) / (2 * eps)
        assert np.max(np.abs(rm.rotation_jacobian_dir(aa, d) - fd)) < 2e-5


def test_blend_rot_endpoints_exact():
    rng = np.random.default_rng(7)
    a = rm.aa_to_mat(rng.standard_normal(3))
    b = rm.aa_to_mat(rng.standard_normal(3))
    assert np.array_equal(rm.blend_rot(a, b, 0.0), a)
    assert np.array_equal(rm.blend_rot(a, b, 1.0), b)


def test_blend_rot_midpoint_of_yaws():
    # geodesic between yaw 0.2 and yaw 0.6 at gamma=0.5 is yaw 0.4
    a = rm.rot_z(0.2)
    b = rm.rot_z(0.6)
    mid = rm.blend_rot(a, b, 0.5)
    assert np.allclose(mid, rm.rot_z(0.4), atol=1e-12)


def test_blend_rot_swap_symmetry():
    rng = np.random.default_rng(8)
    a = rm.aa_to_mat(rng.standard_normal(3) * 0.7)
    b = rm.aa_to_mat(rng.standard_normal(3) * 0.7)
    assert np.allclose(rm.blend_rot(a, b, 0.3), rm.blend_rot(b, a, 0.7),
                       atol=1e-12)


def test_mat_power():
    R = rm.rot_y(0.5)
    half = rm.mat_power(R, 0.5)
    assert np.allclose(half @ half, R, atol=1e-12)
    assert np.allclose(rm.mat_power(R, 0.0), np.eye(3), atol=1e-15)
    assert np.allclose(rm.mat_power(R, 1.0), R, atol=1e-12)
    with pytest.raises(ValueError):
        rm.mat_power(R, 2.0)


def test_blended_rotations_orthonormal():
    rng = np.random.default_rng(9)
    for _ in range(20):
        a = rm.aa_to_mat(rng.standard_normal(3))
        b = rm.aa_to_mat(rng.standard_normal(3))
        m = rm.blend_rot(a, b, rng.uniform())
        assert np.max(np.abs(m.T @ m - np.eye(3))) < 1e-6
