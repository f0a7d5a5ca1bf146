"""Reward terms for motion guidance, with analytic gradients.

All terms are evaluated on world-space joint/marker trajectories obtained
from one forward-kinematics pass; their gradients are assembled as joint and
marker cotangents and pulled back through a single fk_vjp call. Subgradient
conventions are fixed so results are deterministic: sign(0) = 0, ReLU is
inactive at exactly 0, and ties in min/argmin resolve to the lowest index.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import kinematics as kin

EPS_VEL = 0.5
EPS_PENE = 0.03
EPS_CONT = 0.01
EPS_ACC = 50.0

TERM_NAMES = ("his", "acc", "goal", "cont", "pene", "skt")

# Per-action weights; keys match TERM_NAMES.
_LAMBDA_TABLE = {
    "locomotion": {"his": 1.0, "acc": 0.0, "goal": 1.0, "cont": 0.1,
                   "pene": 0.0, "skt": 1e-3},
    "sit": {"his": 1.0, "acc": 1e-3, "goal": 1.0, "cont": 0.1,
            "pene": 0.1, "skt": 3e-4},
    "lie": {"his": 1.0, "acc": 1e-3, "goal": 1.0, "cont": 0.1,
            "pene": 3e-2, "skt": 0.0},
}

_CONTACT_PARTS = {
    "locomotion": ("foot",),
    "sit": ("foot", "gluteus", "back"),
    "lie": ("foot", "gluteus", "back"),
}


@dataclasses.dataclass(frozen=True)
class RewardConfig:
    action: str
    lambda_his: float
    lambda_acc: float
    lambda_goal: float
    lambda_cont: float
    lambda_pene: float
    lambda_skt: float
    eps_vel: float = EPS_VEL
    eps_pene: float = EPS_PENE
    eps_cont: float = EPS_CONT
    eps_acc: float = EPS_ACC
    contact_parts: tuple = ("foot",)
    contact_floor: bool = True          # floor-height contact vs scene SDF
    accel_clamped: bool = False         # hinge the acceleration term

    def weight(self, name):
        return getattr(self, "lambda_" + name)


def for_action(action, **overrides):
    """Default reward weights for an action, with keyword overrides
    (e.g. lambda_pene=0.1, accel_clamped=True)."""
    if action not in _LAMBDA_TABLE:
        raise ValueError(f"unknown action {action!r}")
    lam = _LAMBDA_TABLE[action]
    kwargs = dict(
        action=action,
        lambda_his=lam["his"], lambda_acc=lam["acc"], lambda_goal=lam["goal"],
        lambda_cont=lam["cont"], lambda_pene=lam["pene"],
        lambda_skt=lam["skt"],
        contact_parts=_CONTACT_PARTS[action],
        contact_floor=(action == "locomotion"),
    )
    for key, val in overrides.items():
        if key not in RewardConfig.__dataclass_fields__ or key == "action":
            raise ValueError(f"unknown reward override {key!r}")
        kwargs[key] = val
    return RewardConfig(**kwargs)


@dataclasses.dataclass(frozen=True)
class RewardContext:
    """Everything a reward evaluation needs besides the motion itself.

    The motion is in its own canonical frame; to_world maps it into the
    frame of the scene, history and goals.
    """

    config: RewardConfig
    skel: kin.Skeleton
    markers: kin.MarkerSet
    fps: float = 40.0
    scene: object = None                       # SdfGrid or None
    to_world: kin.RigidTransform = None
    history_joints: np.ndarray = None          # (H, K, 3) world
    goal_joints: np.ndarray = None             # (n,) joint indices
    goal_points: np.ndarray = None             # (n, 3) world
    goal_frame: int = None                     # 0-based frame index

    def __post_init__(self):
        if self.to_world is None:
            object.__setattr__(self, "to_world", kin.RigidTransform.identity())
        if (self.goal_joints is None) != (self.goal_points is None):
            raise ValueError("goal_joints and goal_points go together")
        if self.goal_joints is not None:
            gj = np.asarray(self.goal_joints, dtype=np.int64)
            gp = np.asarray(self.goal_points, dtype=np.float64)
            if gj.ndim != 1 or gp.shape != (gj.shape[0], 3):
                raise ValueError("goal_joints (n,) and goal_points (n, 3)")
            if self.goal_frame is None:
                raise ValueError("goal_frame required with goal joints")
            object.__setattr__(self, "goal_joints", gj)
            object.__setattr__(self, "goal_points", gp)
        if self.history_joints is not None:
            h = np.asarray(self.history_joints, dtype=np.float64)
            if h.ndim != 3 or h.shape[1:] != (self.skel.num_joints, 3):
                raise ValueError(f"history_joints must be (H, K, 3), "
                                 f"got {h.shape}")
            object.__setattr__(self, "history_joints", h)


@dataclasses.dataclass(frozen=True)
class RewardBreakdown:
    values: dict                 # term name -> unweighted value
    total: float                 # sum of weight * value over present terms
    gradient: np.ndarray = None  # (S, POSE_DIM) of the weighted total
    grad_norms: dict = None      # term name -> unweighted gradient norm


def _sign(x):
    return np.sign(x)


def _term_his(ctx, joints_w):
    hist = ctx.history_joints
    H = hist.shape[0]
    diff = joints_w[:H] - hist
    jcot = np.zeros_like(joints_w)
    jcot[:H] = -_sign(diff)
    return -float(np.abs(diff).sum()), jcot, None


def _term_acc(ctx, markers_w):
    S = markers_w.shape[0]
    if S < 3:
        return 0.0, None, None
    nu2 = ctx.fps * ctx.fps
    d2 = markers_w[2:] - 2.0 * markers_w[1:-1] + markers_w[:-2]
    norms = np.linalg.norm(d2, axis=-1)                     # (S-2, M)
    safe = np.where(norms > 0.0, norms, 1.0)
    unit = d2 / safe[..., None]
    if ctx.config.accel_clamped:
        excess = norms * nu2 - ctx.config.eps_acc
        act = excess > 0.0
        value = -float(excess[act].sum())
        g = np.where(act[..., None], -nu2 * unit, 0.0)
    else:
        value = float((norms * nu2 - ctx.config.eps_acc).sum())
        g = np.where(norms[..., None] > 0.0, nu2 * unit, 0.0)
    mcot = np.zeros_like(markers_w)
    mcot[2:] += g
    mcot[1:-1] -= 2.0 * g
    mcot[:-2] += g
    return value, None, mcot


def _term_goal(ctx, joints_w):
    g = ctx.goal_frame
    diff = joints_w[g, ctx.goal_joints] - ctx.goal_points
    jcot = np.zeros_like(joints_w)
    jcot[g, ctx.goal_joints] = -_sign(diff)
    return -float(np.abs(diff).sum()), jcot, None


def _term_cont(ctx, markers_w, sdf_vals, sdf_grads):
    mcot = np.zeros_like(markers_w)
    if ctx.config.contact_floor:
        floor = ctx.scene.floor_height if ctx.scene is not None else 0.0
        feet = np.array(ctx.markers.part(*ctx.config.contact_parts))
        z = markers_w[:, feet, 2]                           # (S, F)
        m_star = np.argmin(z, axis=1)
        rows = np.arange(z.shape[0])
        v = z[rows, m_star] - floor
        d = np.abs(v) - ctx.config.eps_cont
        act = d > 0.0
        value = -float(d[act].sum())
        mcot[rows[act], feet[m_star[act]], 2] = -_sign(v[act])
        return value, None, mcot
    if ctx.scene is None:
        raise ValueError("SDF contact term needs a scene")
    m_star = np.argmin(sdf_vals, axis=1)
    rows = np.arange(sdf_vals.shape[0])
    v = sdf_vals[rows, m_star]
    d = np.abs(v) - ctx.config.eps_cont
    act = d > 0.0
    g = -_sign(v[act])[:, None] * sdf_grads[rows[act], m_star[act]]
    mcot[rows[act], m_star[act]] = g
    return -float(d[act].sum()), None, mcot


def _term_pene(ctx, markers_w, sdf_vals, sdf_grads):
    if ctx.scene is None:
        raise ValueError("penetration term needs a scene")
    pen = -sdf_vals - ctx.config.eps_pene
    act = pen > 0.0
    value = -float(pen[act].sum())
    mcot = np.zeros_like(markers_w)
    mcot[act] = sdf_grads[act]
    return value, None, mcot


def _term_skt(ctx, markers_w):
    S = markers_w.shape[0]
    contact = np.array(ctx.markers.part(*ctx.config.contact_parts))
    if S < 2 or contact.size == 0:
        return 0.0, None, None
    nu = ctx.fps
    d = markers_w[1:, contact] - markers_w[:-1, contact]    # (S-1, C, 3)
    speeds = np.linalg.norm(d, axis=-1) * nu
    c_star = np.argmin(speeds, axis=1)
    rows = np.arange(S - 1)
    sp = speeds[rows, c_star]
    e = sp - ctx.config.eps_vel
    act = e > 0.0
    value = -float(e[act].sum())
    mcot = np.zeros_like(markers_w)
    if np.any(act):
        dv = d[rows[act], c_star[act]]
        unit = dv / np.linalg.norm(dv, axis=-1, keepdims=True)
        cols = contact[c_star[act]]
        np.add.at(mcot, (rows[act] + 1, cols), -nu * unit)
        np.add.at(mcot, (rows[act], cols), nu * unit)
    return value, None, mcot


def _applicable(ctx, name):
    if name == "his":
        return ctx.history_joints is not None and ctx.history_joints.shape[0]
    if name == "goal":
        return ctx.goal_joints is not None
    return True


def r_total(motion, ctx, want_gradient=True, want_term_norms=False):
    """Evaluate all active reward terms on one motion.

    Returns a RewardBreakdown whose total is exactly the weighted sum of the
    per-term values; the gradient is of that weighted total with respect to
    the pose array.
    """
    frames = kin._as_motion(motion)
    caches = kin.fk_forward(frames, ctx.skel)
    joints_w = ctx.to_world.apply_points(caches["X"])
    markers_c = kin.fk_markers(frames, ctx.skel, ctx.markers, caches=caches)
    markers_w = ctx.to_world.apply_points(markers_c)

    need_sdf = ((ctx.config.weight("pene") != 0.0)
                or (ctx.config.weight("cont") != 0.0
                    and not ctx.config.contact_floor))
    sdf_vals = sdf_grads = None
    if need_sdf and ctx.scene is not None:
        sdf_vals, sdf_grads = ctx.scene.query(markers_w)

    values = {}
    cots = {}
    for name in TERM_NAMES:
        if ctx.config.weight(name) == 0.0 or not _applicable(ctx, name):
            continue
        if name == "his":
            out = _term_his(ctx, joints_w)
        elif name == "acc":
            out = _term_acc(ctx, markers_w)
        elif name == "goal":
            out = _term_goal(ctx, joints_w)
        elif name == "cont":
            out = _term_cont(ctx, markers_w, sdf_vals, sdf_grads)
        elif name == "pene":
            out = _term_pene(ctx, markers_w, sdf_vals, sdf_grads)
        else:
            out = _term_skt(ctx, markers_w)
        values[name] = out[0]
        cots[name] = out[1:]

    total = 0.0
    for name in TERM_NAMES:
        if name in values:
            total += ctx.config.weight(name) * values[name]

    if not want_gradient:
        return RewardBreakdown(values=values, total=total)

    R = ctx.to_world.R
    jcot = np.zeros((frames.shape[0], ctx.skel.num_joints, 3))
    mcot = np.zeros_like(markers_w)
    for name, (jc, mc) in cots.items():
        w = ctx.config.weight(name)
        if jc is not None:
            jcot += w * jc
        if mc is not None:
            mcot += w * mc
    grad = kin.fk_vjp(frames, ctx.skel, markers=ctx.markers,
                      joint_cot=jcot @ R, marker_cot=mcot @ R, caches=caches)

    norms = None
    if want_term_norms:
        norms = {}
        for name, (jc, mc) in cots.items():
            g = kin.fk_vjp(frames, ctx.skel, markers=ctx.markers,
                           joint_cot=(jc @ R if jc is not None else None),
                           marker_cot=(mc @ R if mc is not None else None),
                           caches=caches)
            norms[name] = float(np.linalg.norm(g))
    return RewardBreakdown(values=values, total=total, gradient=grad,
                           grad_norms=norms)


def r_total_value(motion, ctx):
    """Weighted total only; skips all gradient work."""
    return r_total(motion, ctx, want_gradient=False).total


def fd_gradient_oracle(fn, motion, step=1e-5):
    """Central-difference gradient of a scalar motion functional. Slow;
    meant for tests."""
    frames = np.array(kin._as_motion(motion), copy=True)
    grad = np.zeros_like(frames)
    flat, gflat = frames.ravel(), grad.ravel()
    for i in range(flat.size):
        base = flat[i]
        flat[i] = base + step
        hi = fn(frames)
        flat[i] = base - step
        lo = fn(frames)
        flat[i] = base
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad
