"""Analytic motion priors: linear motion bases and a projection denoiser.

The denoiser estimates the clean motion from a noised one by least squares
onto a per-action linear basis of canonical motions (first-frame pelvis at
the origin, facing +y). Keyframe joint hints enter the solve as weighted
rows: pelvis hints are exact linear constraints (pelvis position equals the
translation), other joints are linearized through forward kinematics with a
single Gauss-Newton step. The vjp is the exact adjoint of that computation,
including the second-order kinematics terms from the linearization point.
"""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np

from . import kinematics as kin
from .diffusion import Denoiser

BASIS_MAGIC = b"DIPB1"
MAX_BASIS_COLUMNS = 200
RIDGE = 1e-8
ACTIONS = ("locomotion", "sit", "lie")


@dataclasses.dataclass(frozen=True)
class MotionBasis:
    """Orthonormal motion basis: columns[s, p, d] is pose coordinate p of
    frame s in basis motion d."""

    action: str
    columns: np.ndarray          # (S, POSE_DIM, D) float64
    fps: float = 40.0

    def __post_init__(self):
        c = np.asarray(self.columns, dtype=np.float64)
        if c.ndim != 3 or c.shape[1] != kin.POSE_DIM:
            raise ValueError(f"columns must be (S, {kin.POSE_DIM}, D), got {c.shape}")
        if c.shape[2] > MAX_BASIS_COLUMNS:
            raise ValueError(f"too many basis columns: {c.shape[2]} > "
                             f"{MAX_BASIS_COLUMNS}")
        c.flags.writeable = False
        object.__setattr__(self, "columns", c)

    @property
    def num_frames(self):
        return self.columns.shape[0]

    @property
    def dim(self):
        return self.columns.shape[2]

    @property
    def matrix(self):
        """(S*POSE_DIM, D) view for linear algebra."""
        S, P, D = self.columns.shape
        return self.columns.reshape(S * P, D)


def _ramp(r):
    return r


def _quad(r):
    return r * r


def _half_sine(r):
    return np.sin(np.pi * r)


def _full_sine(r):
    return np.sin(2.0 * np.pi * r)


def _smoothstep(r):
    return r * r * (3.0 - 2.0 * r)


# Joint angle coordinates used for constant/settle posture columns:
# (joint, axis) pairs covering spine bend, leg folding, arm pose, head.
_POSTURE_COORDS = (
    (kin.SPINE1, 0), (kin.SPINE2, 0), (kin.SPINE3, 0),
    (kin.SPINE2, 1),
    (kin.L_HIP, 0), (kin.R_HIP, 0),
    (kin.L_HIP, 2), (kin.R_HIP, 2),
    (kin.L_KNEE, 0), (kin.R_KNEE, 0),
    (kin.L_ANKLE, 0), (kin.R_ANKLE, 0),
    (kin.L_SHOULDER, 0), (kin.R_SHOULDER, 0),
    (kin.L_SHOULDER, 2), (kin.R_SHOULDER, 2),
    (kin.L_ELBOW, 0), (kin.R_ELBOW, 0),
    (kin.NECK, 0), (kin.HEAD, 0),
)

# Gait sinusoids: (joint, axis, sign) triples sharing one phase, left/right
# antiphase in the sagittal plane.
_GAIT_GROUPS = (
    ((kin.L_HIP, 0, 1.0), (kin.R_HIP, 0, -1.0)),
    ((kin.L_KNEE, 0, 1.0), (kin.R_KNEE, 0, -1.0)),
    ((kin.L_ANKLE, 0, 1.0), (kin.R_ANKLE, 0, -1.0)),
    ((kin.L_SHOULDER, 0, -1.0), (kin.R_SHOULDER, 0, 1.0)),
)


def _angle_index(joint, axis):
    if joint == 0:
        return axis
    return 3 * joint + axis


def build_action_basis(action, skel=None, num_frames=160, fps=40.0,
                       gait_cycles=5.0):
    """Construct the linear motion basis for one action.

    Locomotion spans root paths (ramps, arcs via yaw profiles) with periodic
    limb swing; sit/lie span approach-then-settle ramps toward a
    parameterized end posture. Every column is a canonical motion direction:
    first-frame translation and yaw are exactly zero. Columns are
    orthonormalized, so the Gram matrix is the identity up to roundoff.
    """
    if action not in ACTIONS:
        raise ValueError(f"unknown action {action!r}; expected one of {ACTIONS}")
    S = int(num_frames)
    r = np.arange(S) / (S - 1.0)
    raw = []

    def col():
        c = np.zeros((S, kin.POSE_DIM))
        raw.append(c)
        return c

    if action == "locomotion":
        tau_profiles = (_ramp, _quad, _half_sine, _full_sine)
        yaw_profiles = (_ramp, _quad, _half_sine, _full_sine)
        settle = None
    else:
        tau_profiles = (_ramp, _quad, _half_sine, _smoothstep)
        yaw_profiles = (_ramp, _half_sine, _smoothstep)
        settle = _smoothstep

    for axis in range(3):
        for prof in tau_profiles:
            col()[:, kin.TAU.start + axis] = prof(r)
    for prof in yaw_profiles:
        col()[:, 2] = prof(r)                    # global yaw, zero at frame 0

    # Constant global pitch/roll (lean); allowed to be nonzero at frame 0.
    col()[:, 0] = 1.0
    col()[:, 1] = 1.0
    if settle is not None:
        col()[:, 0] = settle(r)
        col()[:, 1] = settle(r)

    phase = 2.0 * np.pi * gait_cycles * r
    gait_groups = _GAIT_GROUPS if action == "locomotion" else _GAIT_GROUPS[:2]
    for group in gait_groups:
        for wave in (np.sin(phase), np.cos(phase)):
            c = col()
            for joint, axis, sign in group:
                c[:, _angle_index(joint, axis)] = 0.5 * sign * wave

    for joint, axis in _POSTURE_COORDS:
        prof = np.ones(S) if settle is None else settle(r)
        col()[:, _angle_index(joint, axis)] = prof

    B = np.stack(raw, axis=-1).reshape(S * kin.POSE_DIM, len(raw))
    B /= np.linalg.norm(B, axis=0)
    q, rr = np.linalg.qr(B)
    d = np.diagonal(rr)
    if np.min(np.abs(d)) < 1e-10:
        raise ValueError("basis columns are linearly dependent")
    q = q * np.sign(d)
    # Rows untouched by every raw column are zero in exact arithmetic; scrub
    # the QR roundoff so frame-0 translation and yaw are zero bit-for-bit.
    q[np.all(B == 0.0, axis=1)] = 0.0
    return MotionBasis(action=action,
                       columns=q.reshape(S, kin.POSE_DIM, len(raw)).copy(),
                       fps=fps)


def save_basis(basis, path):
    header = [
        BASIS_MAGIC.decode(),
        "action %s" % basis.action,
        "dims %d %d %d" % basis.columns.shape,
        "fps %s" % repr(float(basis.fps)),
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n\n").encode("ascii"))
        fh.write(basis.columns.astype("<f4").tobytes(order="C"))


def load_basis(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(BASIS_MAGIC + b"\n"):
        raise ValueError(f"{path}: bad magic at byte 0: not a DIPB1 file")
    end = blob.find(b"\n\n")
    if end < 0:
        raise ValueError(f"{path}: unterminated header")
    lines = blob[:end].decode("ascii").split("\n")
    fields = {}
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        fields[key] = rest
    try:
        action = fields["action"]
        dims = tuple(int(v) for v in fields["dims"].split())
        fps = float(fields["fps"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: malformed header: {exc}") from None
    n = dims[0] * dims[1] * dims[2]
    start = end + 2
    if len(blob) - start != 4 * n:
        raise ValueError(f"{path}: payload at byte {start} must be {4 * n} "
                         f"bytes, have {len(blob) - start}")
    flat = np.frombuffer(blob, dtype="<f4", count=n, offset=start)
    return MotionBasis(action=action,
                       columns=flat.astype(np.float64).reshape(dims),
                       fps=fps)


class ProjectionDenoiser(Denoiser):
    """Clean-motion estimate by (hint-weighted) least squares onto a basis.

    Without hints the estimate is the orthogonal projection of x_t/sqrt(abar_t)
    onto span(B), so it always lies in the span. Hints add weighted residual
    rows; the output is then B theta* for the augmented solve, still in the
    span.
    """

    def __init__(self, basis, schedule, skel=None, markers=None,
                 hint_weight=10.0):
        self.basis = basis
        self.schedule = schedule
        self.skel = skel if skel is not None else kin.default_skeleton()
        self.markers = markers
        self.hint_weight = float(hint_weight)
        B = basis.matrix
        self._B = B
        self._A = B.T @ B
        self._A_inv = np.linalg.inv(self._A)

    @property
    def num_frames(self):
        return self.basis.num_frames

    def _scale(self, t):
        return 1.0 / np.sqrt(self.schedule.alpha_bars[t])

    def _hint_lists(self, cond):
        """Split valid hints into pelvis (linear) and other-joint (GN) lists
        of (frame, joint, target)."""
        if cond is None or cond.hints is None:
            return [], []
        hints = cond.hints
        frames, joints = np.nonzero(hints.valid)
        pelvis, gn = [], []
        for s, k in zip(frames, joints):
            entry = (int(s), int(k), hints.values[s, k])
            (pelvis if k == kin.PELVIS else gn).append(entry)
        return pelvis, gn

    def _solve(self, x_t, t, cond):
        """Run the augmented least squares; returns the full solve state."""
        y = np.asarray(x_t, dtype=np.float64) * self._scale(t)
        b0 = self._B.T @ y.ravel()
        theta_bar = self._A_inv @ b0
        pelvis, gn = self._hint_lists(cond)
        state = {"y": y, "theta_bar": theta_bar, "pelvis": pelvis, "gn": gn}
        if not pelvis and not gn:
            state["theta_star"] = theta_bar
            return state

        w = self.hint_weight
        G = self._A.copy()
        b = b0.copy()
        cols = self.basis.columns
        for s, _, target in pelvis:
            rows = cols[s, kin.TAU, :]                       # (3, D)
            G += w * rows.T @ rows
            b += w * rows.T @ target
        if gn:
            xbar = (self._B @ theta_bar).reshape(self.num_frames, kin.POSE_DIM)
            frames = np.array([s for s, _, _ in gn])
            lin = xbar[frames]                               # (n, POSE_DIM)
            caches = kin.fk_forward(lin, self.skel)
            J = np.empty((len(gn), 3, kin.POSE_DIM))
            for i in range(3):
                cot = np.zeros((len(gn), kin.NUM_JOINTS, 3))
                for h, (_, k, _) in enumerate(gn):
                    cot[h, k, i] = 1.0
                J[:, i, :] = kin.fk_vjp(lin, self.skel, joint_cot=cot,
                                        caches=caches)
            fk = caches["X"]
            state["gn_lin"] = lin
            state["gn_J"] = J
            t_h = np.empty((len(gn), 3))
            rows_all = np.empty((len(gn), 3, self.basis.dim))
            for h, (s, k, target) in enumerate(gn):
                t_h[h] = target - fk[h, k] + J[h] @ lin[h]
                rows = J[h] @ cols[s]                        # (3, D)
                rows_all[h] = rows
                G += w * rows.T @ rows
                b += w * rows.T @ t_h[h]
            state["gn_t"] = t_h
            state["gn_rows"] = rows_all
        try:
            np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            warnings.warn("hint system is rank deficient; adding ridge",
                          stacklevel=3)
            G = G + RIDGE * np.eye(G.shape[0])
        state["G"] = G
        state["theta_star"] = np.linalg.solve(G, b)
        return state

    def predict_x0(self, x_t, t, cond=None):
        state = self._solve(x_t, t, cond)
        return (self._B @ state["theta_star"]).reshape(self.num_frames,
                                                       kin.POSE_DIM)

    def vjp(self, x_t, t, cond, cotangent):
        """Exact gradient of <predict_x0(x_t, t, cond), cotangent> in x_t."""
        state = self._solve(x_t, t, cond)
        u = np.asarray(cotangent, dtype=np.float64).ravel()
        if "G" not in state:
            lam = self._A_inv @ (self._B.T @ u)
            return (self._B @ lam).reshape(self.num_frames, kin.POSE_DIM) \
                * self._scale(t)

        G = state["G"]
        lam = np.linalg.solve(G, self._B.T @ u)
        ybar = self._B @ lam
        gn = state["gn"]
        if gn:
            # Differentiate the Gauss-Newton rows through the linearization
            # point xbar = B A^-1 B^T y. The first-order FK terms of the
            # residual target cancel against the J xbar term, leaving only
            # second-order (Hessian) contributions.
            w = self.hint_weight
            cols = self.basis.columns
            theta_star = state["theta_star"]
            theta_bar = state["theta_bar"]
            lin, J = state["gn_lin"], state["gn_J"]
            t_h = state["gn_t"]
            n = len(gn)
            C = np.empty((n, 3, kin.POSE_DIM))
            for h, (s, k, _) in enumerate(gn):
                Bs = cols[s]                                 # (POSE_DIM, D)
                Bl = Bs @ lam
                xs = Bs @ theta_star
                JBl = J[h] @ Bl
                Jxs = J[h] @ xs
                Jbar = w * (np.outer(t_h[h], Bl) - np.outer(Jxs, Bl)
                            - np.outer(JBl, xs))
                C[h] = Jbar + w * np.outer(JBl, Bs @ theta_bar)
            caches = kin.fk_forward(lin, self.skel)
            xbb = np.zeros((n, kin.POSE_DIM))
            for i in range(3):
                cot = np.zeros((n, kin.NUM_JOINTS, 3))
                for h, (_, k, _) in enumerate(gn):
                    cot[h, k, i] = 1.0
                xbb += kin.fk_vjp_jvp(lin, self.skel, joint_cot=cot,
                                      tangent=C[:, i, :], caches=caches)
            full = np.zeros(self.num_frames * kin.POSE_DIM)
            for h, (s, _, _) in enumerate(gn):
                full[s * kin.POSE_DIM:(s + 1) * kin.POSE_DIM] += xbb[h]
            ybar += self._B @ (self._A_inv @ (self._B.T @ full))
        return ybar.reshape(self.num_frames, kin.POSE_DIM) * self._scale(t)
