import math

import numpy as np
import pytest
from conftest import random_motion

from dipmotion import kinematics as kin
from dipmotion import metrics as mt
from dipmotion import rotmath as rm
from dipmotion import scene as sc


def static_motion(num_frames, x=0.0, y=0.0, height=0.95):
    return np.tile(kin.standing_pose(x=x, y=y, height=height),
                   (num_frames, 1))


def test_contact_score_planted_foot_is_one(skel):
    motion = static_motion(5)
    assert mt.contact_score(motion, skel) == 1.0


def test_contact_score_hovering_body(skel):
    # lowest foot joint sits at z = 0.02 when standing; lifting the body by
    # 1.03 puts it exactly 1.0 above the tolerance band
    motion = static_motion(5, height=0.95 + 1.03)
    assert mt.contact_score(motion, skel) == pytest.approx(np.exp(-1.0),
                                                           rel=1e-12)


def test_contact_score_sliding_body(skel):
    motion = static_motion(5)
    motion[:, kin.TAU.start] += (1.075 / 40.0) * np.arange(5)
    assert mt.contact_score(motion, skel) == pytest.approx(np.exp(-1.0),
                                                           rel=1e-12)


def test_contact_score_validation(skel):
    with pytest.raises(ValueError):
        mt.contact_score(static_motion(1), skel)


def test_penetration_stats_match_bruteforce(skel, markers, box_grid):
    rng = np.random.default_rng(41)
    motion = random_motion(rng, 6, tau_scale=0.3)
    motion[:, kin.TAU.start + 1] += 1.5        # park the body in the box
    pm, px = mt.penetration_stats(motion, skel, markers, box_grid)
    assert pm > 0.0
    depths = []
    # per-frame queries; exactly rounded sums are order-free, so the metric
    # value is comparable bit for bit
    for pts in kin.fk_markers(motion, skel, markers):
        vals, _ = box_grid.query(pts)
        depths.append(math.fsum(np.maximum(-vals, 0.0)))
    depths = np.array(depths)
    assert pm == float(depths.mean())
    assert px == float(depths.max())


def test_walkable_score(skel, markers, box_grid):
    clear = static_motion(3, x=2.0, y=1.5)
    assert mt.walkable_score(clear, skel, markers, box_grid) == 1.0
    mixed = np.vstack([static_motion(1, x=0.0, y=1.5),
                       static_motion(1, x=2.0, y=1.5)])
    score = mt.walkable_score(mixed, skel, markers, box_grid)
    pts = kin.fk_markers(mixed, skel, markers)
    assert score == float(box_grid.walkable_at(pts).mean())
    assert 0.0 < score < 1.0


def test_max_marker_accel(skel, markers):
    assert mt.max_marker_accel(static_motion(5), skel, markers) == 0.0
    assert mt.max_marker_accel(static_motion(2), skel, markers) == 0.0
    c = 0.01
    motion = static_motion(6)
    motion[:, kin.TAU.start + 1] += c * np.arange(6) ** 2
    accel = mt.max_marker_accel(motion, skel, markers)
    assert accel == pytest.approx(2.0 * c * 1600.0, rel=1e-9)


def xy_motion(path):
    frames = np.zeros((len(path), kin.POSE_DIM))
    frames[:, 66:68] = path
    return frames


def test_finish_metrics_settles():
    path = [(3.0, 0.0), (2.0, 0.0), (1.0, 0.0), (0.5, 0.0),
            (0.05, 0.0), (0.02, 0.0), (0.0, 0.01), (0.0, 0.0),
            (0.03, 0.0), (0.0, 0.05)]
    time, dist = mt.finish_metrics(xy_motion(path), (0.0, 0.0))
    assert time == pytest.approx(5.0 / 40.0)   # settles at 1-based frame 5
    assert dist == pytest.approx(0.05)


def test_finish_metrics_never_arrives():
    path = [(3.0, 0.0)] * 4
    time, dist = mt.finish_metrics(xy_motion(path), (0.0, 0.0))
    assert time == pytest.approx(4.0 / 40.0)
    assert dist == pytest.approx(3.0)


def test_finish_metrics_always_inside():
    path = [(0.01, 0.0)] * 4
    time, dist = mt.finish_metrics(xy_motion(path), (0.0, 0.0))
    assert time == pytest.approx(1.0 / 40.0)
    assert dist == pytest.approx(0.01)


def test_finish_metrics_reentry_counts_last_stretch():
    path = [(3.0, 0.0), (0.05, 0.0), (0.04, 0.0), (0.5, 0.0),
            (0.05, 0.0), (0.0, 0.0)]
    time, dist = mt.finish_metrics(xy_motion(path), (0.0, 0.0))
    assert time == pytest.approx(5.0 / 40.0)
    assert dist == 0.0


def test_report_bundle(skel, markers, box_grid):
    motion = static_motion(4, x=2.0, y=1.5)
    rep = mt.report(motion, skel, markers, (2.0, 1.5), scene=box_grid)
    assert rep.contact_score == 1.0
    assert rep.final_goal_distance == 0.0
    assert rep.penetration_mean == 0.0
    assert rep.walkable_score == 1.0
    lines = rep.lines()
    assert any(line.startswith("finish_time ") for line in lines)
    bare = mt.report(motion, skel, markers, (2.0, 1.5))
    assert bare.penetration_mean is None
    assert all(not line.startswith("penetration") for line in bare.lines())


def test_metrics_rigid_invariance(skel, markers):
    # rotate the world a quarter turn and shift it; motion, scene and goal
    # move together, so every metric must be preserved
    box = [{"type": "box", "center": [0.5, 1.0, 0.5],
            "half_extents": [0.4, 0.5, 0.5]}]
    grid_a = sc.bake(sc.parse_obstacles(box), origin=(-2.0, -2.0, -0.5),
                     spacing=0.25, dims=(17, 17, 9))
    yaw = np.pi / 2.0
    R = rm.aa_to_mat(np.array([0.0, 0.0, yaw]))
    t = np.array([0.5, -0.25, 0.0])
    box_b = [{"type": "box",
              "center": list(R @ np.array([0.5, 1.0, 0.5]) + t),
              "half_extents": [0.5, 0.4, 0.5]}]
    grid_b = sc.bake(sc.parse_obstacles(box_b), origin=(-1.5, -2.25, -0.5),
                     spacing=0.25, dims=(17, 17, 9))

    rng = np.random.default_rng(55)
    motion = random_motion(rng, 5, tau_scale=0.2)
    motion[:, kin.TAU.start:kin.TAU.start + 2] += [0.4, 0.9]
    moved = kin.apply_transform(kin.RigidTransform(R=R, t=t), motion)

    pm_a, px_a = mt.penetration_stats(motion, skel, markers, grid_a)
    pm_b, px_b = mt.penetration_stats(moved, skel, markers, grid_b)
    assert pm_a > 0.0
    assert pm_b == pytest.approx(pm_a, rel=1e-9, abs=1e-12)
    assert px_b == pytest.approx(px_a, rel=1e-9, abs=1e-12)

    ca = mt.contact_score(motion, skel, scene=grid_a)
    cb = mt.contact_score(moved, skel, scene=grid_b)
    assert cb == pytest.approx(ca, rel=1e-9)

    wa = mt.walkable_score(motion, skel, markers, grid_a)
    wb = mt.walkable_score(moved, skel, markers, grid_b)
    assert wb == pytest.approx(wa, abs=1e-12)

    goal = np.array([0.6, 1.1])
    goal_b = (R @ np.array([0.6, 1.1, 0.0]) + t)[:2]
    ta_, da = mt.finish_metrics(motion, goal)
    tb_, db = mt.finish_metrics(moved, goal_b)
    assert tb_ == ta_
    assert db == pytest.approx(da, rel=1e-9, abs=1e-12)
