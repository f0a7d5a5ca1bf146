"""Command line interface.

Subcommands: bake (scene spec -> SDF grid file), run (scenario -> motion
trace and metrics), ablate (guidance-mode/inpainting comparison grid), check
(built-in numeric self-tests). Exit codes: 0 success, 2 invalid input,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import __version__
from . import diffusion
from . import dip
from . import kinematics as kin
from . import metrics as metrics_mod
from . import planner
from . import prior
from . import rewards
from . import scene as scene_mod


def _fmt(x):
    return repr(float(x))


def _goal_xy(script):
    """Horizontal goal of the last task: its pelvis target when present,
    else its first goal joint target."""
    task = script.tasks[-1]
    sel = np.nonzero(task.goal_joints == kin.PELVIS)[0]
    idx = sel[0] if sel.size else 0
    return task.goal_points[idx, :2]


def _write_trace(path, frames, skel):
    joints = kin.fk_joints(frames, skel)
    cols = ["frame"]
    cols += [f"pose_{i}" for i in range(kin.POSE_DIM)]
    for name in kin.JOINT_NAMES:
        cols += [f"{name}_x", f"{name}_y", f"{name}_z"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for s in range(frames.shape[0]):
            row = [str(s + 1)]
            row += [_fmt(v) for v in frames[s]]
            row += [_fmt(v) for v in joints[s].ravel()]
            fh.write(",".join(row) + "\n")


def _write_rewards_trace(path, tasks):
    with open(path, "w") as fh:
        fh.write("task,t," + ",".join(rewards.TERM_NAMES)
                 + ",total,nat_proxy\n")
        for tr in tasks:
            res = tr.result
            for i, t in enumerate(res.steps):
                row = [str(tr.index), str(int(t))]
                row += [_fmt(v) for v in res.term_values[i]]
                row += [_fmt(res.reward_total[i]), _fmt(res.nat_proxy[i])]
                fh.write(",".join(row) + "\n")


def cmd_bake(args):
    grid = scene_mod.load_scene_spec(args.spec)
    grid.save(args.out)
    print(f"baked {args.spec} -> {args.out} "
          f"({grid.dims[0]}x{grid.dims[1]}x{grid.dims[2]} nodes)")
    return 0


def cmd_run(args):
    script = planner.load_script(args.scenario)
    if args.seed is not None:
        script = dataclasses.replace(script, seed=args.seed)
    steps = args.steps
    if steps is None:
        steps = int(script.overrides.get("num_steps", 1000))
    t0 = time.monotonic()
    plan = planner.run_scenario(script, mode=args.mode,
                                use_inpaint=not args.no_inpaint,
                                num_steps=steps)
    wall = time.monotonic() - t0
    os.makedirs(args.out, exist_ok=True)
    skel = kin.default_skeleton()
    markers = kin.default_markers()
    _write_trace(os.path.join(args.out, "trace.csv"), plan.motion.frames,
                 skel)
    _write_rewards_trace(os.path.join(args.out, "rewards_trace.csv"),
                         plan.tasks)
    rep = metrics_mod.report(plan.motion.frames, skel, markers,
                             _goal_xy(script), scene=plan.scene,
                             fps=plan.motion.fps)
    with open(os.path.join(args.out, "metrics.txt"), "w") as fh:
        fh.write("\n".join(rep.lines()) + "\n")
    manifest = {
        "scenario": os.path.abspath(args.scenario),
        "scene": (os.path.abspath(script.scene_path)
                  if script.scene_path else None),
        "seed": script.seed,
        "mode": args.mode,
        "inpaint": not args.no_inpaint,
        "steps": steps,
        "out": os.path.abspath(args.out),
        "version": __version__,
        "wall_clock_s": wall,
    }
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"run complete: {plan.motion.num_frames} frames, "
          f"{len(plan.tasks)} tasks, {wall:.1f}s")
    for line in rep.lines():
        print(" ", line)
    return 0


def _ablate_cell(scenario, mode, inpaint, seed, steps):
    script = planner.load_script(scenario)
    script = dataclasses.replace(script, seed=seed)
    plan = planner.run_scenario(script, mode=mode, use_inpaint=inpaint,
                                num_steps=steps)
    skel = kin.default_skeleton()
    markers = kin.default_markers()
    rep = metrics_mod.report(plan.motion.frames, skel, markers,
                             _goal_xy(script), scene=plan.scene,
                             fps=plan.motion.fps)
    return {
        "mode": mode,
        "inpaint": int(inpaint),
        "seed": seed,
        "final_goal_distance": rep.final_goal_distance,
        "finish_time": rep.finish_time,
        "contact_score": rep.contact_score,
        "penetration_mean": rep.penetration_mean,
        "penetration_max": rep.penetration_max,
        "walkable_score": rep.walkable_score,
        "max_accel": metrics_mod.max_marker_accel(plan.motion.frames, skel,
                                                  markers,
                                                  fps=plan.motion.fps),
    }


_ABLATE_FIELDS = ("mode", "inpaint", "seed", "final_goal_distance",
                  "finish_time", "contact_score", "penetration_mean",
                  "penetration_max", "walkable_score", "max_accel")


def cmd_ablate(args):
    script = planner.load_script(args.scenario)       # validate up front
    steps = args.steps
    if steps is None:
        steps = int(script.overrides.get("num_steps", 1000))
    cells = [(args.scenario, mode, inpaint, seed, steps)
             for mode in dip.MODES
             for inpaint in (True, False)
             for seed in range(args.seeds)]
    if args.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(args.workers) as pool:
            rows = list(pool.map(_ablate_cell_star, cells))
    else:
        rows = [_ablate_cell(*cell) for cell in cells]
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "table.csv"), "w") as fh:
        fh.write(",".join(_ABLATE_FIELDS) + "\n")
        for row in rows:
            fh.write(",".join("" if row[k] is None
                              else (str(row[k]) if k in ("mode", "inpaint",
                                                         "seed")
                                    else _fmt(row[k]))
                              for k in _ABLATE_FIELDS) + "\n")
    lines = []
    for mode in dip.MODES:
        for inpaint in (1, 0):
            sub = [r for r in rows
                   if r["mode"] == mode and r["inpaint"] == inpaint]
            vals = {}
            for key in _ABLATE_FIELDS[3:]:
                data = [r[key] for r in sub if r[key] is not None]
                vals[key] = float(np.mean(data)) if data else float("nan")
            lines.append(f"{mode:10s} inpaint={inpaint} "
                         + " ".join(f"{k}={vals[k]:.4f}"
                                    for k in _ABLATE_FIELDS[3:]))
    table = "\n".join(lines) + "\n"
    with open(os.path.join(args.out, "table.txt"), "w") as fh:
        fh.write(table)
    print(table, end="")
    return 0


def _ablate_cell_star(cell):
    return _ablate_cell(*cell)


def _check_schedule():
    ok = True
    for T in (1000, 150, 80):
        sch = diffusion.build_schedule(T)
        ok &= sch.betas[0] == 0.0 and sch.alpha_bars[0] == 1.0
        ok &= sch.beta_tilde[1] == 0.0
        ok &= bool(np.all(np.diff(sch.alpha_bars) < 0))
        ok &= abs(np.log(sch.alpha_bars[-1])
                  - diffusion.reference_log_abar()) < 1e-6
    sch = diffusion.build_schedule(100)
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((3, kin.POSE_DIM))
    xt = rng.standard_normal((3, kin.POSE_DIM))
    ok &= bool(np.array_equal(diffusion.posterior_mean(x0, xt, 1, sch), x0))
    return bool(ok)


def _check_grad():
    rng = np.random.default_rng(1)
    skel = kin.default_skeleton()
    markers = kin.default_markers()
    grid = scene_mod.bake(scene_mod.parse_obstacles(
        [{"type": "box", "center": [0.0, 1.0, 0.4],
          "half_extents": [0.4, 0.4, 0.4]}]),
        origin=(-3.0, -3.0, -0.5), spacing=0.25, dims=(25, 25, 9))
    motion = np.zeros((5, kin.POSE_DIM))
    motion[:, :66] = rng.standard_normal((5, 66)) * 0.3
    motion[:, 66:] = rng.standard_normal((5, 3)) * 0.4
    motion[:, 68] += 0.9
    hist = kin.fk_joints(motion[:2] + 0.01, skel)
    ctx = rewards.RewardContext(
        config=rewards.for_action("sit"), skel=skel, markers=markers,
        scene=grid, history_joints=hist, goal_joints=np.array([kin.PELVIS]),
        goal_points=np.array([[0.0, 1.0, 0.5]]), goal_frame=4)
    bd = rewards.r_total(motion, ctx)
    fd = rewards.fd_gradient_oracle(lambda m: rewards.r_total_value(m, ctx),
                                    motion)
    err = np.max(np.abs(bd.gradient - fd)) / max(1.0, np.max(np.abs(fd)))
    if err > 1e-4:
        return False
    sch = diffusion.build_schedule(100)
    basis = prior.build_action_basis("locomotion", skel, num_frames=24)
    den = prior.ProjectionDenoiser(basis, sch, skel)
    x = rng.standard_normal((24, kin.POSE_DIM))
    u = rng.standard_normal((24, kin.POSE_DIM))
    v = rng.standard_normal((24, kin.POSE_DIM))
    g = den.vjp(x, 60, None, u)
    eps = 1e-6
    d = (np.sum(den.predict_x0(x + eps * v, 60) * u)
         - np.sum(den.predict_x0(x - eps * v, 60) * u)) / (2 * eps)
    return abs(d - np.sum(g * v)) / max(1.0, abs(d)) < 1e-5


def _check_blend():
    rng = np.random.default_rng(2)
    a = rng.standard_normal(kin.POSE_DIM) * 0.4
    b = rng.standard_normal(kin.POSE_DIM) * 0.4
    ok = np.array_equal(kin.blend_pose(a, b, 0.0), a)
    ok &= np.array_equal(kin.blend_pose(a, b, 1.0), b)
    skel = kin.default_skeleton()
    m = np.zeros((3, kin.POSE_DIM))
    m[:, 68] = 0.95
    m[:, 2] = 0.3
    m[:, 66] = 1.0
    canon, t = kin.canonicalize(m, skel)
    j = kin.fk_joints(canon[:1], skel)[0]
    ok &= np.linalg.norm(j[kin.PELVIS]) < 1e-12
    d = j[kin.R_HIP] - j[kin.L_HIP]
    ok &= abs(d[1]) < 1e-12 and d[0] > 0
    return bool(ok)


def cmd_check(args):
    suites = []
    if args.grad or not (args.grad or args.schedule or args.blend):
        suites.append(("grad", _check_grad))
    if args.schedule or not (args.grad or args.schedule or args.blend):
        suites.append(("schedule", _check_schedule))
    if args.blend or not (args.grad or args.schedule or args.blend):
        suites.append(("blend", _check_blend))
    failed = False
    for name, fn in suites:
        good = fn()
        print(f"{'PASS' if good else 'FAIL'} {name}")
        failed |= not good
    return 3 if failed else 0


def build_parser():
    p = argparse.ArgumentParser(prog="dipmotion",
                                description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bake", help="bake a scene spec into an SDF grid")
    b.add_argument("--spec", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_bake)

    r = sub.add_parser("run", help="synthesize a scenario")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--mode", default="inversion", choices=dip.MODES)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--steps", type=int, default=None)
    r.add_argument("--no-inpaint", action="store_true")
    r.set_defaults(fn=cmd_run)

    a = sub.add_parser("ablate",
                       help="compare guidance modes and inpainting")
    a.add_argument("--scenario", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", type=int, default=3)
    a.add_argument("--steps", type=int, default=None)
    a.add_argument("--workers", type=int, default=1)
    a.set_defaults(fn=cmd_ablate)

    c = sub.add_parser("check", help="run numeric self-tests")
    c.add_argument("--grad", action="store_true")
    c.add_argument("--schedule", action="store_true")
    c.add_argument("--blend", action="store_true")
    c.set_defaults(fn=cmd_check)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, json.JSONDecodeError,
            scene_mod.SceneFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except planner.ScenarioRunError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
