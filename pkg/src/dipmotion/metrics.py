"""Evaluation metrics for synthesized motions.

All metrics are functions of world-space joint/marker trajectories and the
scene, and are invariant under rigid horizontal transforms applied jointly
to motion, scene and goal.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import kinematics as kin

FOOT_JOINTS = (kin.L_ANKLE, kin.R_ANKLE, kin.L_FOOT, kin.R_FOOT)
CONTACT_HEIGHT_TOL = 0.05
CONTACT_SPEED_TOL = 0.075
ARRIVE_TOL = 0.1


def contact_score(motion, skel, scene=None, fps=40.0):
    """Mean per-frame foot contact plausibility in [0, 1].

    Each frame scores exp(-relu(|lowest foot height|-0.05)) *
    exp(-relu(slowest foot speed-0.075)); a firmly planted foot scores 1.
    """
    frames = kin._as_motion(motion)
    if frames.shape[0] < 2:
        raise ValueError("contact score needs at least 2 frames")
    floor = scene.floor_height if scene is not None else 0.0
    J = kin.fk_joints(frames, skel)[:, FOOT_JOINTS]
    z = J[:, :, 2] - floor
    vel = np.linalg.norm(J[1:] - J[:-1], axis=-1) * fps    # (S-1, F)
    height = np.abs(z[:-1].min(axis=1))
    speed = vel.min(axis=1)
    score = np.exp(-np.maximum(height - CONTACT_HEIGHT_TOL, 0.0)) \
        * np.exp(-np.maximum(speed - CONTACT_SPEED_TOL, 0.0))
    return float(score.mean())


def penetration_stats(motion, skel, markers, scene):
    """(mean, max) over frames of the summed marker penetration depth.

    Per-frame depths are exactly rounded sums (math.fsum), so an independent
    recomputation from the same marker positions matches bit for bit; numpy
    axis reductions associate differently per allocation and do not.
    """
    frames = kin._as_motion(motion)
    M = kin.fk_markers(frames, skel, markers)
    vals, _ = scene.query(M)
    hinge = np.maximum(-vals, 0.0)
    depth = np.array([math.fsum(row) for row in hinge])
    return float(depth.mean()), float(depth.max())


def walkable_score(motion, skel, markers, scene):
    """Fraction of marker samples whose grid column is walkable."""
    frames = kin._as_motion(motion)
    M = kin.fk_markers(frames, skel, markers)
    return float(scene.walkable_at(M).mean())


def max_marker_accel(motion, skel, markers, fps=40.0):
    """Largest second-difference marker acceleration over the motion."""
    frames = kin._as_motion(motion)
    if frames.shape[0] < 3:
        return 0.0
    M = kin.fk_markers(frames, skel, markers)
    d2 = M[2:] - 2.0 * M[1:-1] + M[:-2]
    return float(np.linalg.norm(d2, axis=-1).max() * fps * fps)


def finish_metrics(motion, goal_xy, fps=40.0, tol=ARRIVE_TOL):
    """(finish_time, final_distance) against a horizontal pelvis goal.

    Finish time is the (1-based) first frame from which the pelvis stays
    within tol of the goal, in seconds; S/fps when it never settles. The
    distance is measured at the final frame.
    """
    frames = kin._as_motion(motion)
    d = np.linalg.norm(frames[:, 66:68] - np.asarray(goal_xy, dtype=np.float64),
                       axis=1)
    inside = d <= tol
    settled = np.flatnonzero(~inside[::-1])
    if settled.size == 0:
        first = 0
    elif settled[0] == 0:
        first = None
    else:
        first = frames.shape[0] - settled[0]
    time = (first + 1) / fps if first is not None else frames.shape[0] / fps
    return float(time), float(d[-1])


@dataclasses.dataclass(frozen=True)
class MetricsReport:
    finish_time: float
    final_goal_distance: float
    contact_score: float
    penetration_mean: float = None
    penetration_max: float = None
    walkable_score: float = None

    def lines(self):
        out = []
        for field in dataclasses.fields(self):
            val = getattr(self, field.name)
            if val is not None:
                out.append(f"{field.name} {repr(val)}")
        return out


def report(motion, skel, markers, goal_xy, scene=None, fps=40.0):
    """Bundle all metrics for one motion; scene metrics only with a scene."""
    time, dist = finish_metrics(motion, goal_xy, fps=fps)
    kwargs = dict(finish_time=time, final_goal_distance=dist,
                  contact_score=contact_score(motion, skel, scene=scene,
                                              fps=fps))
    if scene is not None:
        pm, px = penetration_stats(motion, skel, markers, scene)
        kwargs.update(penetration_mean=pm, penetration_max=px,
                      walkable_score=walkable_score(motion, skel, markers,
                                                    scene))
    return MetricsReport(**kwargs)
