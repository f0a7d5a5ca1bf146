"""Long-term synthesis: split a scenario into per-task denoising runs.

Each task is synthesized in a canonical frame anchored to the first frame of
its history window (pelvis at the origin, facing +y). History enters three
ways: the last H frames are inpainted during early denoising, their pelvis
trajectory is passed as keyframe hints, and the history-consistency reward
compares the first H generated frames against them. Results are mapped back
to world coordinates, blended over the overlap and concatenated.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from . import dip
from . import kinematics as kin
from . import rewards
from . import scene as scene_mod
from .diffusion import Condition, InpaintSpec, KeyframeHints, build_schedule
from .prior import ACTIONS, ProjectionDenoiser, build_action_basis

H_MAX = 10
NUM_FRAMES = 160
FPS = 40.0
SPEEDS = {"locomotion": 1.2, "sit": 0.8, "lie": 0.8}
HOLD_STRIDE = 8

# Script override keys that steer the run rather than the reward.
RUN_KEYS = ("num_steps", "hint_goal_hold", "hint_weight", "inner_iterations",
            "grad_clip", "t_inpaint", "gait_cycles", "walk_speed")


class ScenarioRunError(Exception):
    """Synthesis failed mid-scenario; carries what was assembled so far."""

    def __init__(self, task_index, partial_motion, message):
        super().__init__(f"task {task_index}: {message}")
        self.task_index = task_index
        self.partial_motion = partial_motion


@dataclasses.dataclass(frozen=True)
class SubTask:
    action: str
    goal_joints: np.ndarray       # (n,) joint indices
    goal_points: np.ndarray       # (n, 3) world targets

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")
        gj = np.asarray(self.goal_joints, dtype=np.int64)
        gp = np.asarray(self.goal_points, dtype=np.float64)
        if gj.ndim != 1 or gj.size == 0 or gp.shape != (gj.size, 3):
            raise ValueError("need >= 1 goal joint with (n, 3) targets")
        if gj.min() < 0 or gj.max() >= kin.NUM_JOINTS:
            raise ValueError(f"goal joint out of range: {gj}")
        if not np.isfinite(gp).all():
            raise ValueError("goal targets must be finite")
        object.__setattr__(self, "goal_joints", gj)
        object.__setattr__(self, "goal_points", gp)


@dataclasses.dataclass(frozen=True)
class ScenarioScript:
    seed: int
    initial_pose: np.ndarray      # (POSE_DIM,)
    tasks: tuple
    scene_path: str = None
    overrides: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        pose = np.asarray(self.initial_pose, dtype=np.float64)
        if pose.shape != (kin.POSE_DIM,) or not np.isfinite(pose).all():
            raise ValueError(f"initial_pose must be {kin.POSE_DIM} finite "
                             f"reals")
        if not self.tasks:
            raise ValueError("scenario needs at least one task")
        reward_fields = rewards.RewardConfig.__dataclass_fields__
        for key in self.overrides:
            if key not in RUN_KEYS and (key not in reward_fields
                                        or key == "action"):
                raise ValueError(f"unknown override {key!r}")
        object.__setattr__(self, "initial_pose", pose)
        object.__setattr__(self, "tasks", tuple(self.tasks))

    def reward_overrides(self):
        return {k: v for k, v in self.overrides.items() if k not in RUN_KEYS}

    def run_overrides(self):
        return {k: v for k, v in self.overrides.items() if k in RUN_KEYS}


def load_script(path):
    """Parse a scenario JSON file; scene paths resolve against the file."""
    with open(path) as fh:
        raw = json.load(fh)
    try:
        tasks = tuple(
            SubTask(action=entry["action"],
                    goal_joints=[g["joint"] for g in entry["goal_joints"]],
                    goal_points=[g["xyz"] for g in entry["goal_joints"]])
            for entry in raw["tasks"])
        script = ScenarioScript(
            seed=int(raw["seed"]),
            initial_pose=raw["initial_pose"],
            tasks=tasks,
            scene_path=raw.get("scene"),
            overrides=dict(raw.get("overrides", {})))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed scenario: {exc}") from None
    if script.scene_path is not None:
        resolved = os.path.join(os.path.dirname(os.path.abspath(path)),
                                script.scene_path)
        object.__setattr__(script, "scene_path", resolved)
    return script


def select_goal_frame(start_xy, goal_xy, action, fps=FPS, history=H_MAX,
                      num_frames=NUM_FRAMES, speed=None):
    """Frame (1-based) at which the goal should be reached, from horizontal
    distance at a nominal per-action speed (overridable per scenario)."""
    if speed is None:
        speed = SPEEDS[action]
    speed = float(speed)
    if not speed > 0.0:
        raise ValueError(f"walk speed must be positive, got {speed}")
    dist = float(np.linalg.norm(np.asarray(goal_xy, dtype=np.float64)
                                - np.asarray(start_xy, dtype=np.float64)))
    g = history + int(round(dist * fps / speed))
    return int(np.clip(g, history + 1, num_frames))


def build_hints(num_frames, num_joints, history_pelvis, goal_joints,
                goal_points, goal_frame):
    """Keyframe hints: history pelvis on frames 1..H, goal joints on frame
    goal_frame (both 1-based)."""
    values = np.zeros((num_frames, num_joints, 3))
    valid = np.zeros((num_frames, num_joints), dtype=bool)
    H = history_pelvis.shape[0]
    values[:H, kin.PELVIS] = history_pelvis
    valid[:H, kin.PELVIS] = True
    values[goal_frame - 1, goal_joints] = goal_points
    valid[goal_frame - 1, goal_joints] = True
    return KeyframeHints(values=values, valid=valid)


def _hold_goal_hints(hints, goal_joints, goal_points, goal_frame, num_frames):
    """Repeat the pelvis goal on every HOLD_STRIDE-th frame after the goal
    frame (and the last frame) so arrival is held rather than passed
    through."""
    sel = np.nonzero(goal_joints == kin.PELVIS)[0]
    if sel.size == 0:
        return hints
    target = goal_points[sel[0]]
    frames = list(range(goal_frame + HOLD_STRIDE, num_frames + 1,
                        HOLD_STRIDE))
    if num_frames not in frames:
        frames.append(num_frames)
    values = np.array(hints.values)
    valid = np.array(hints.valid)
    for f in frames:
        values[f - 1, kin.PELVIS] = target
        valid[f - 1, kin.PELVIS] = True
    return KeyframeHints(values=values, valid=valid)


@dataclasses.dataclass(frozen=True)
class TaskResult:
    index: int
    action: str
    goal_frame: int               # 1-based within the segment
    start_frame: int              # row of the segment start in the assembly
    transform: kin.RigidTransform  # world -> canonical
    result: dip.SynthesisResult
    goal_joints: np.ndarray
    goal_points: np.ndarray       # world


@dataclasses.dataclass(frozen=True)
class PlanResult:
    motion: kin.MotionClip        # assembled world-frame motion
    tasks: tuple
    scene: object = None


_BASIS_CACHE = {}


def _basis_for(action, skel, num_frames, gait_cycles):
    key = (action, num_frames, gait_cycles)
    if key not in _BASIS_CACHE:
        _BASIS_CACHE[key] = build_action_basis(
            action, skel, num_frames=num_frames, fps=FPS,
            gait_cycles=gait_cycles)
    return _BASIS_CACHE[key]


def run_scenario(script, mode="inversion", use_inpaint=True, num_steps=None,
                 scene_grid=None, num_frames=NUM_FRAMES):
    """Synthesize every task in order and assemble the long-term motion."""
    skel = kin.default_skeleton()
    markers = kin.default_markers()
    if scene_grid is None and script.scene_path is not None:
        scene_grid = scene_mod.load_scene_any(script.scene_path)
    run_over = script.run_overrides()
    if num_steps is None:
        num_steps = int(run_over.get("num_steps", 1000))
    schedule = build_schedule(num_steps)
    guide = dip.GuidanceConfig(
        mode=mode,
        inner_iterations=int(run_over.get("inner_iterations", 1)),
        grad_clip=float(run_over.get("grad_clip", dip.GRAD_CLIP)),
        t_inpaint=int(run_over.get("t_inpaint", 50)))
    hint_weight = float(run_over.get("hint_weight", 10.0))
    hold_goal = bool(run_over.get("hint_goal_hold", True))
    gait_cycles = float(run_over.get("gait_cycles", 5.0))
    walk_speed = run_over.get("walk_speed")

    long_frames = script.initial_pose[None]
    results = []
    for idx, task in enumerate(script.tasks):
        H = min(long_frames.shape[0], H_MAX)
        hist_world = long_frames[-H:]
        try:
            hist_canon, to_canon = kin.canonicalize(hist_world, skel)
        except ValueError as exc:
            raise ScenarioRunError(idx, kin.MotionClip(long_frames),
                                   str(exc)) from exc
        to_world = to_canon.inverse()
        goal_canon = to_canon.apply_points(task.goal_points)
        pelvis_sel = np.nonzero(task.goal_joints == kin.PELVIS)[0]
        ref = goal_canon[pelvis_sel[0]] if pelvis_sel.size else goal_canon[0]
        g = select_goal_frame(hist_canon[-1, 66:68], ref[:2], task.action,
                              fps=FPS, history=H, num_frames=num_frames,
                              speed=walk_speed)
        hints = build_hints(num_frames, kin.NUM_JOINTS,
                            hist_canon[:, kin.TAU], task.goal_joints,
                            goal_canon, g)
        if hold_goal:
            hints = _hold_goal_hints(hints, task.goal_joints, goal_canon, g,
                                     num_frames)
        cond = Condition(action=task.action, hints=hints)
        inpaint = None
        if use_inpaint:
            mask = np.zeros((num_frames, kin.POSE_DIM), dtype=bool)
            mask[:H] = True
            values = np.zeros((num_frames, kin.POSE_DIM))
            values[:H] = hist_canon
            inpaint = InpaintSpec(mask=mask, values=values)
        ctx = rewards.RewardContext(
            config=rewards.for_action(task.action,
                                      **script.reward_overrides()),
            skel=skel, markers=markers, fps=FPS, scene=scene_grid,
            to_world=to_world,
            history_joints=kin.fk_joints(hist_world, skel),
            goal_joints=task.goal_joints, goal_points=task.goal_points,
            goal_frame=g - 1)
        basis = _basis_for(task.action, skel, num_frames, gait_cycles)
        denoiser = ProjectionDenoiser(basis, schedule, skel, markers,
                                      hint_weight=hint_weight)
        rng = np.random.default_rng([script.seed, idx])
        try:
            res = dip.synthesize(denoiser, schedule, cond, ctx, rng,
                                 inpaint=inpaint, guide=guide)
        except Exception as exc:
            raise ScenarioRunError(idx, kin.MotionClip(long_frames),
                                   f"synthesis failed: {exc}") from exc
        if not np.isfinite(res.motion.frames).all():
            raise ScenarioRunError(idx, kin.MotionClip(long_frames),
                                   "synthesis produced non-finite poses")
        world = kin.apply_transform(to_world, res.motion.frames)
        start = long_frames.shape[0] - H
        blended = kin.blend_overlap(long_frames[-H:], world[:H])
        long_frames = kin.concat_long_term(long_frames, blended, world[H:])
        results.append(TaskResult(
            index=idx, action=task.action, goal_frame=g, start_frame=start,
            transform=to_canon, result=res, goal_joints=task.goal_joints,
            goal_points=task.goal_points))
    return PlanResult(motion=kin.MotionClip(long_frames), tasks=tuple(results),
                      scene=scene_grid)
