import numpy as np
import pytest

import dipmotion
from dipmotion import kinematics as kin
from dipmotion import rotmath as rm
from conftest import random_motion

# Zero-pose joint positions, summed along parent chains by hand from the
# offset table.
ZERO_POSE_JOINTS = {
    "pelvis": (0.0, 0.0, 0.95),
    "left_hip": (-0.09, 0.0, 0.89),
    "right_knee": (0.09, 0.0, 0.49),
    "left_ankle": (-0.09, 0.0, 0.08),
    "right_foot": (0.09, 0.12, 0.02),
    "spine3": (0.0, 0.0, 1.32),
    "head": (0.0, 0.0, 1.62),
    "left_wrist": (-0.67, 0.0, 1.44),
}


def standing(num_frames=1):
    return np.tile(kin.standing_pose(), (num_frames, 1))


def test_zero_pose_joint_positions(skel):
    J = kin.fk_joints(standing(), skel)[0]
    for name, expect in ZERO_POSE_JOINTS.items():
        j = kin.JOINT_NAMES.index(name)
        assert np.allclose(J[j], expect, atol=1e-12), name


def test_zero_pose_sole_markers_on_floor(skel, markers):
    M = kin.fk_markers(standing(), skel, markers)[0]
    foot = markers.part("foot")
    assert np.max(np.abs(M[foot, 2])) < 1e-12
    # toe marker of the left foot: foot joint plus (0, 0.10, -0.02)
    assert np.allclose(M[foot[0]], (-0.09, 0.22, 0.0), atol=1e-12)


def test_marker_parts(markers):
    assert len(markers.part("foot")) == 8
    assert len(markers.part("gluteus")) == 2
    assert len(markers.part("back")) == 2
    assert len(markers.part("foot", "gluteus", "back")) == 12
    assert markers.num_markers == 20


def test_fk_equivariance_under_rigid_transform(skel):
    rng = np.random.default_rng(10)
    m = random_motion(rng, 4)
    t = kin.RigidTransform(R=rm.rot_z(0.8),
                           t=np.array([1.0, -2.0, 0.3]))
    J1 = kin.fk_joints(kin.apply_transform(t, m), skel)
    J2 = t.apply_points(kin.fk_joints(m, skel))
    assert np.max(np.abs(J1 - J2)) < 1e-10


def test_fk_vjp_matches_fd(skel, markers):
    rng = np.random.default_rng(11)
    m = random_motion(rng, 3)
    jcot = rng.standard_normal((3, skel.num_joints, 3))
    mcot = rng.standard_normal((3, markers.num_markers, 3))
    grad = kin.fk_vjp(m, skel, markers=markers, joint_cot=jcot,
                      marker_cot=mcot)

    def value(x):
        return float(np.sum(kin.fk_joints(x, skel) * jcot)
                     + np.sum(kin.fk_markers(x, skel, markers) * mcot))

    v = rng.standard_normal(m.shape)
    eps = 1e-6
    fd = (value(m + eps * v) - value(m - eps * v)) / (2 * eps)
    assert abs(fd - np.sum(grad * v)) / max(1.0, abs(fd)) < 1e-6


def test_fk_vjp_jvp_matches_fd_of_vjp(skel, markers):
    rng = np.random.default_rng(12)
    m = random_motion(rng, 2)
    jcot = rng.standard_normal((2, skel.num_joints, 3))
    tangent = rng.standard_normal(m.shape)
    hvp = kin.fk_vjp_jvp(m, skel, joint_cot=jcot, tangent=tangent)
    eps = 1e-5
    fd = (kin.fk_vjp(m + eps * tangent, skel, joint_cot=jcot)
          - kin.fk_vjp(m - eps * tangent, skel, joint_cot=jcot)) / (2 * eps)
    assert np.max(np.abs(hvp - fd)) < 1e-5


def test_fk_vjp_jvp_symmetry(skel):
    # Hessian of a linear functional of joints is symmetric:
    # <u, H v> == <v, H u>
    rng = np.random.default_rng(13)
    m = random_motion(rng, 2)
    jcot = rng.standard_normal((2, skel.num_joints, 3))
    u = rng.standard_normal(m.shape)
    v = rng.standard_normal(m.shape)
    hu = kin.fk_vjp_jvp(m, skel, joint_cot=jcot, tangent=u)
    hv = kin.fk_vjp_jvp(m, skel, joint_cot=jcot, tangent=v)
    assert abs(np.sum(v * hu) - np.sum(u * hv)) < 1e-9


def test_canonicalize_invariants(skel):
    rng = np.random.default_rng(14)
    for _ in range(20):
        m = random_motion(rng, 3)
        canon, t = kin.canonicalize(m, skel)
        J = kin.fk_joints(canon[:1], skel)[0]
        assert np.linalg.norm(J[kin.PELVIS]) < 1e-9
        d = J[kin.R_HIP] - J[kin.L_HIP]
        assert abs(d[1]) < 1e-9 and d[0] > 0.0
        # transform really maps input to canonical
        assert np.max(np.abs(kin.apply_transform(t, m) - canon)) < 1e-12


def test_canonicalize_invariant_under_yaw_translation(skel):
    rng = np.random.default_rng(15)
    m = random_motion(rng, 3)
    canon, _ = kin.canonicalize(m, skel)
    pre = kin.RigidTransform(R=rm.rot_z(1.3), t=np.array([4.0, -1.0, 0.0]))
    canon2, _ = kin.canonicalize(kin.apply_transform(pre, m), skel)
    assert np.max(np.abs(canon - canon2)) < 1e-9


def test_canonicalize_roundtrip(skel):
    rng = np.random.default_rng(16)
    m = random_motion(rng, 2)
    canon, t = kin.canonicalize(m, skel)
    back = kin.apply_transform(t.inverse(), canon)
    assert np.max(np.abs(back - m)) < 1e-9


def test_canonicalize_degenerate_hips_raises(skel):
    m = standing(2)
    # roll the body 90 degrees about y: hip line becomes vertical
    m[:, 0:3] = (0.0, np.pi / 2, 0.0)
    with pytest.raises(ValueError):
        kin.canonicalize(m, skel)


def test_blend_pose_endpoints_bit_exact():
    rng = np.random.default_rng(17)
    a = rng.standard_normal(kin.POSE_DIM)
    b = rng.standard_normal(kin.POSE_DIM)
    assert np.array_equal(kin.blend_pose(a, b, 0.0), a)
    assert np.array_equal(kin.blend_pose(a, b, 1.0), b)
    with pytest.raises(ValueError):
        kin.blend_pose(a, b, 1.5)


def test_blend_pose_translation_lerp():
    a = kin.standing_pose(0.0, 0.0)
    b = kin.standing_pose(1.0, 2.0)
    mid = kin.blend_pose(a, b, 0.25)
    assert np.allclose(mid[kin.TAU], (0.25, 0.5, 0.95), atol=1e-15)


def test_blend_pose_rotation_geodesic():
    a = np.zeros(kin.POSE_DIM)
    b = np.zeros(kin.POSE_DIM)
    a[2] = 0.2
    b[2] = 0.6
    mid = kin.blend_pose(a, b, 0.5)
    assert np.allclose(mid[0:3], (0.0, 0.0, 0.4), atol=1e-12)


def test_blend_overlap_weights():
    # constant poses: blended translation follows gamma = s/(H+1)
    a = np.tile(kin.standing_pose(0.0, 0.0), (3, 1))
    b = np.tile(kin.standing_pose(0.0, 4.0), (3, 1))
    out = kin.blend_overlap(a, b)
    assert np.allclose(out[:, 67], [1.0, 2.0, 3.0], atol=1e-12)


def test_concat_preserves_prev_exactly():
    rng = np.random.default_rng(18)
    prev = rng.standard_normal((12, kin.POSE_DIM))
    blended = rng.standard_normal((4, kin.POSE_DIM))
    tail = rng.standard_normal((6, kin.POSE_DIM))
    out = kin.concat_long_term(prev, blended, tail)
    assert out.shape == (8 + 4 + 6, kin.POSE_DIM)
    assert np.array_equal(out[:8], prev[:8])
    assert np.array_equal(out[8:12], blended)
    assert np.array_equal(out[12:], tail)
    with pytest.raises(ValueError):
        kin.concat_long_term(prev[:2], blended[:3], tail)


def test_asset_tables_match_defaults(skel, markers):
    s2 = kin.load_skeleton(dipmotion.asset_path("skeleton.txt"))
    assert np.array_equal(s2.parents, skel.parents)
    assert np.array_equal(s2.offsets, skel.offsets)
    assert tuple(s2.names) == tuple(skel.names)
    m2 = kin.load_markers(dipmotion.asset_path("markers.txt"))
    assert np.array_equal(m2.joints, markers.joints)
    assert np.array_equal(m2.offsets, markers.offsets)
    assert tuple(m2.tags) == tuple(markers.tags)


def test_motion_clip_validation():
    with pytest.raises(ValueError):
        kin.MotionClip(frames=np.full((2, kin.POSE_DIM), np.nan))
    clip = kin.MotionClip(frames=np.zeros((2, kin.POSE_DIM)))
    assert clip.num_frames == 2 and clip.fps == 40.0


def test_rigid_transform_compose_inverse():
    rng = np.random.default_rng(19)
    t1 = kin.RigidTransform(R=rm.rot_z(0.5), t=rng.standard_normal(3))
    t2 = kin.RigidTransform(R=rm.rot_x(0.3), t=rng.standard_normal(3))
    p = rng.standard_normal((5, 3))
    assert np.allclose(t1.compose(t2).apply_points(p),
                       t1.apply_points(t2.apply_points(p)), atol=1e-12)
    assert np.allclose(t1.inverse().apply_points(t1.apply_points(p)), p,
                       atol=1e-12)
