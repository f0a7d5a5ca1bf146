"""Articulated body model: pose layout, forward kinematics, canonicalization,
rigid transforms, and overlap blending for long motions.

Pose layout (69 reals per frame):
    [0:3]   global orientation, axis-angle
    [3:66]  21 joint rotations, axis-angle (joints 1..21 of the skeleton)
    [66:69] root translation

The root joint (pelvis) sits exactly at the translation; the global
orientation rotates the body about the pelvis. The vertical axis is z.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import rotmath

POSE_DIM = 69
NUM_JOINTS = 22
GLOBAL_AA = slice(0, 3)
JOINTS_AA = slice(3, 66)
TAU = slice(66, 69)

# Joint indices (tree order: parents precede children).
PELVIS, L_HIP, R_HIP, SPINE1, L_KNEE, R_KNEE, SPINE2, L_ANKLE, R_ANKLE, \
    SPINE3, L_FOOT, R_FOOT, NECK, L_COLLAR, R_COLLAR, HEAD, L_SHOULDER, \
    R_SHOULDER, L_ELBOW, R_ELBOW, L_WRIST, R_WRIST = range(22)

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
)

_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19)

# Rest-pose offsets from parent, z up, body facing +y. Pelvis offset is zero:
# the pelvis equals the root translation. Standing pelvis height ~0.95.
_OFFSETS = (
    (0.00, 0.00, 0.00),    # pelvis
    (-0.09, 0.00, -0.06),  # left_hip
    (0.09, 0.00, -0.06),   # right_hip
    (0.00, 0.00, 0.11),    # spine1
    (0.00, 0.00, -0.40),   # left_knee
    (0.00, 0.00, -0.40),   # right_knee
    (0.00, 0.00, 0.13),    # spine2
    (0.00, 0.00, -0.41),   # left_ankle
    (0.00, 0.00, -0.41),   # right_ankle
    (0.00, 0.00, 0.13),    # spine3
    (0.00, 0.12, -0.06),   # left_foot
    (0.00, 0.12, -0.06),   # right_foot
    (0.00, 0.00, 0.14),    # neck
    (-0.06, 0.00, 0.10),   # left_collar
    (0.06, 0.00, 0.10),    # right_collar
    (0.00, 0.00, 0.16),    # head
    (-0.10, 0.00, 0.02),   # left_shoulder
    (0.10, 0.00, 0.02),    # right_shoulder
    (-0.26, 0.00, 0.00),   # left_elbow
    (0.26, 0.00, 0.00),    # right_elbow
    (-0.25, 0.00, 0.00),   # left_wrist
    (0.25, 0.00, 0.00),    # right_wrist
)

# Pelvis height of the zero pose with feet (marker soles) on z=0.
STANDING_PELVIS_HEIGHT = 0.95

# Surface markers: (joint, local offset, body-part tag).
_MARKERS = (
    (L_FOOT, (0.00, 0.10, -0.02), "foot"),     # left toe
    (L_FOOT, (0.00, -0.14, -0.02), "foot"),    # left heel
    (L_FOOT, (0.04, 0.00, -0.02), "foot"),     # left inner
    (L_FOOT, (-0.04, 0.00, -0.02), "foot"),    # left outer
    (R_FOOT, (0.00, 0.10, -0.02), "foot"),     # right toe
    (R_FOOT, (0.00, -0.14, -0.02), "foot"),    # right heel
    (R_FOOT, (-0.04, 0.00, -0.02), "foot"),    # right inner
    (R_FOOT, (0.04, 0.00, -0.02), "foot"),     # right outer
    (PELVIS, (-0.08, -0.10, -0.08), "gluteus"),
    (PELVIS, (0.08, -0.10, -0.08), "gluteus"),
    (SPINE3, (-0.06, -0.10, 0.02), "back"),
    (SPINE3, (0.06, -0.10, 0.02), "back"),
    (L_WRIST, (-0.06, 0.00, -0.02), "hand"),
    (L_WRIST, (-0.11, 0.02, 0.00), "hand"),
    (R_WRIST, (0.06, 0.00, -0.02), "hand"),
    (R_WRIST, (0.11, 0.02, 0.00), "hand"),
    (SPINE1, (0.00, 0.11, 0.00), "other"),     # belly
    (SPINE2, (0.00, 0.11, 0.00), "other"),     # chest
    (SPINE2, (-0.13, 0.00, 0.00), "other"),    # left side
    (SPINE2, (0.13, 0.00, 0.00), "other"),     # right side
)


def _frozen(a):
    a = np.asarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclasses.dataclass(frozen=True)
class Skeleton:
    """Joint tree with rest offsets. Immutable after construction."""

    parents: np.ndarray          # (K,) int, parents[0] == -1
    offsets: np.ndarray          # (K, 3) rest offset from parent
    names: tuple

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int64)
        offsets = _frozen(self.offsets)
        if parents[0] != -1:
            raise ValueError("joint 0 must be the root (parent -1)")
        if np.any(parents[1:] >= np.arange(1, len(parents))):
            raise ValueError("parents must precede children")
        parents.flags.writeable = False
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)

    @property
    def num_joints(self):
        return len(self.parents)


@dataclasses.dataclass(frozen=True)
class MarkerSet:
    """Surface markers attached to joints, tagged by body part."""

    joints: np.ndarray           # (M,) int
    offsets: np.ndarray          # (M, 3) local offset in the joint frame
    tags: tuple                  # (M,) body-part tag strings

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.int64)
        joints.flags.writeable = False
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "offsets", _frozen(self.offsets))

    @property
    def num_markers(self):
        return len(self.joints)

    def part(self, *tags):
        """Indices of markers whose tag is in tags."""
        wanted = set(tags)
        return np.array([i for i, t in enumerate(self.tags) if t in wanted],
                        dtype=np.int64)


def default_skeleton():
    return Skeleton(parents=np.array(_PARENTS), offsets=np.array(_OFFSETS),
                    names=JOINT_NAMES)


def default_markers():
    joints = np.array([m[0] for m in _MARKERS])
    offsets = np.array([m[1] for m in _MARKERS])
    tags = tuple(m[2] for m in _MARKERS)
    return MarkerSet(joints=joints, offsets=offsets, tags=tags)


def load_skeleton(path):
    """Parse a skeleton table: one joint per line, 'index parent ox oy oz name'."""
    rows = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 5:
                raise ValueError(f"{path}:{ln}: expected 'index parent ox oy oz [name]'")
            rows.append((int(parts[0]), int(parts[1]),
                         [float(parts[2]), float(parts[3]), float(parts[4])],
                         parts[5] if len(parts) > 5 else f"joint{parts[0]}"))
    rows.sort(key=lambda r: r[0])
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ValueError(f"{path}: joint indices must be 0..K-1 without gaps")
    return Skeleton(parents=np.array([r[1] for r in rows]),
                    offsets=np.array([r[2] for r in rows]),
                    names=tuple(r[3] for r in rows))


def load_markers(path):
    """Parse a marker table: one marker per line, 'joint ox oy oz tag'."""
    joints, offsets, tags = [], [], []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 5:
                raise ValueError(f"{path}:{ln}: expected 'joint ox oy oz tag'")
            joints.append(int(parts[0]))
            offsets.append([float(parts[1]), float(parts[2]), float(parts[3])])
            tags.append(parts[4])
    return MarkerSet(joints=np.array(joints), offsets=np.array(offsets),
                     tags=tuple(tags))


@dataclasses.dataclass(frozen=True)
class MotionClip:
    """A pose sequence with its frame rate."""

    frames: np.ndarray           # (S, POSE_DIM)
    fps: float = 40.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != POSE_DIM:
            raise ValueError(f"frames must be (S, {POSE_DIM}), got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames contain non-finite values")
        object.__setattr__(self, "frames", _frozen(frames))

    @property
    def num_frames(self):
        return self.frames.shape[0]


def standing_pose(x=0.0, y=0.0, height=STANDING_PELVIS_HEIGHT):
    """Zero pose standing at (x, y) with feet on the floor plane z=0."""
    pose = np.zeros(POSE_DIM)
    pose[TAU] = (x, y, height)
    return pose


def _as_motion(motion):
    m = np.asarray(motion, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2 or m.shape[1] != POSE_DIM:
        raise ValueError(f"expected (S, {POSE_DIM}) motion, got {m.shape}")
    return m


def _local_aa(motion):
    """Per-joint axis-angle array (S, K, 3): joint 0 uses the global slot."""
    S = motion.shape[0]
    aa = np.empty((S, NUM_JOINTS, 3))
    aa[:, 0] = motion[:, GLOBAL_AA]
    aa[:, 1:] = motion[:, JOINTS_AA].reshape(S, NUM_JOINTS - 1, 3)
    return aa


def fk_forward(motion, skel):
    """Forward kinematics caches for one motion.

    Returns a dict with local rotations L (S,K,3,3), world rotations W,
    world joint positions X (S,K,3), and the per-joint axis-angle aa.
    """
    m = _as_motion(motion)
    S = m.shape[0]
    aa = _local_aa(m)
    L = rotmath.aa_to_mat(aa)
    W = np.empty_like(L)
    X = np.empty((S, NUM_JOINTS, 3))
    W[:, 0] = L[:, 0]
    X[:, 0] = m[:, TAU]
    off = skel.offsets
    for j in range(1, NUM_JOINTS):
        p = skel.parents[j]
        W[:, j] = W[:, p] @ L[:, j]
        X[:, j] = X[:, p] + W[:, p] @ off[j]
    return {"aa": aa, "L": L, "W": W, "X": X}


def fk_joints(motion, skel):
    """World joint positions (S, K, 3)."""
    return fk_forward(motion, skel)["X"]


def fk_markers(motion, skel, markers, caches=None):
    """World marker positions (S, M, 3)."""
    if caches is None:
        caches = fk_forward(motion, skel)
    W, X = caches["W"], caches["X"]
    jm = markers.joints
    # P_m = X_j + W_j u_m
    return X[:, jm] + np.einsum("smij,mj->smi", W[:, jm], markers.offsets)


def _backward(caches, skel, markers, joint_cot, marker_cot, tangent_aa=None):
    """Reverse-mode FK, optionally with a forward tangent through the reverse
    pass (exact second-order term, needed to differentiate Gauss-Newton hint
    solves). Returns (grad, grad_dot); grad_dot is None without a tangent.
    """
    aa, L, W = caches["aa"], caches["L"], caches["W"]
    S = aa.shape[0]
    D = rotmath.rotation_jacobian(aa)                    # (S, K, 3, 3, 3)
    with_dot = tangent_aa is not None

    Xbar = np.zeros((S, NUM_JOINTS, 3))
    Wbar = np.zeros((S, NUM_JOINTS, 3, 3))
    if joint_cot is not None:
        Xbar += joint_cot
    if marker_cot is not None:
        for mi in range(markers.num_markers):
            jm = markers.joints[mi]
            Xbar[:, jm] += marker_cot[:, mi]
            Wbar[:, jm] += np.einsum("si,j->sij", marker_cot[:, mi],
                                     markers.offsets[mi])

    if with_dot:
        Ddot = rotmath.rotation_jacobian_dir(aa, tangent_aa)
        Ldot = np.einsum("skibc,ski->skbc", D, tangent_aa)
        Wdot = np.empty_like(W)
        Wdot[:, 0] = Ldot[:, 0]
        for j in range(1, NUM_JOINTS):
            p = skel.parents[j]
            Wdot[:, j] = Wdot[:, p] @ L[:, j] + W[:, p] @ Ldot[:, j]
        Wbardot = np.zeros_like(Wbar)
        # Cotangent seeds and all X-bar recurrences are constants, so their
        # tangents vanish; only rotation-product terms carry tangents.

    grad = np.zeros((S, POSE_DIM))
    grad_dot = np.zeros((S, POSE_DIM)) if with_dot else None
    off = skel.offsets

    for j in range(NUM_JOINTS - 1, 0, -1):
        p = skel.parents[j]
        Lbar = np.swapaxes(W[:, p], 1, 2) @ Wbar[:, j]
        a_bar = np.einsum("sibc,sbc->si", D[:, j], Lbar)
        sl = slice(3 * j, 3 * j + 3)
        grad[:, sl] = a_bar
        if with_dot:
            Lbardot = np.swapaxes(Wdot[:, p], 1, 2) @ Wbar[:, j] \
                + np.swapaxes(W[:, p], 1, 2) @ Wbardot[:, j]
            grad_dot[:, sl] = np.einsum("sibc,sbc->si", D[:, j], Lbardot) \
                + np.einsum("sibc,sbc->si", Ddot[:, j], Lbar)
            Wbardot[:, p] += Wbardot[:, j] @ np.swapaxes(L[:, j], 1, 2) \
                + Wbar[:, j] @ np.swapaxes(Ldot[:, j], 1, 2)
        Xbar[:, p] += Xbar[:, j]
        Wbar[:, p] += np.einsum("si,j->sij", Xbar[:, j], off[j])
        Wbar[:, p] += Wbar[:, j] @ np.swapaxes(L[:, j], 1, 2)

    grad[:, GLOBAL_AA] = np.einsum("sibc,sbc->si", D[:, 0], Wbar[:, 0])
    grad[:, TAU] = Xbar[:, 0]
    if with_dot:
        grad_dot[:, GLOBAL_AA] = np.einsum("sibc,sbc->si", D[:, 0], Wbardot[:, 0]) \
            + np.einsum("sibc,sbc->si", Ddot[:, 0], Wbar[:, 0])
        # tau cotangent is constant: zero tangent.
    return grad, grad_dot


def fk_vjp(motion, skel, markers=None, joint_cot=None, marker_cot=None,
           caches=None):
    """Pose-space gradient of <joint_cot, joints> + <marker_cot, markers>.

    Cotangent shapes: joint_cot (S, K, 3), marker_cot (S, M, 3). Returns
    (S, POSE_DIM).
    """
    if caches is None:
        caches = fk_forward(motion, skel)
    grad, _ = _backward(caches, skel, markers, joint_cot, marker_cot)
    return grad


def fk_vjp_jvp(motion, skel, markers=None, joint_cot=None, marker_cot=None,
               tangent=None, caches=None):
    """Directional derivative of fk_vjp along a pose-space tangent (S, POSE_DIM).

    Cotangents are held fixed; this is the Hessian of the scalar
    <cotangents, FK(motion)> applied to the tangent.
    """
    m = _as_motion(motion)
    if caches is None:
        caches = fk_forward(m, skel)
    tan = _as_motion(tangent)
    # The tau block of the tangent drops out: joint positions are linear in
    # tau and world rotations do not depend on it, so the Hessian rows and
    # columns indexed by tau vanish identically.
    _, grad_dot = _backward(caches, skel, markers, joint_cot, marker_cot,
                            tangent_aa=_local_aa(tan))
    return grad_dot


# ---------------------------------------------------------------------------
# Rigid transforms and canonicalization


@dataclasses.dataclass(frozen=True)
class RigidTransform:
    """World transform p -> R p + t."""

    R: np.ndarray                # (3, 3)
    t: np.ndarray                # (3,)

    def __post_init__(self):
        object.__setattr__(self, "R", _frozen(self.R))
        object.__setattr__(self, "t", _frozen(self.t))

    @classmethod
    def identity(cls):
        return cls(R=np.eye(3), t=np.zeros(3))

    def apply_points(self, p):
        return np.asarray(p, dtype=np.float64) @ self.R.T + self.t

    def inverse(self):
        return RigidTransform(R=self.R.T, t=-(self.R.T @ self.t))

    def compose(self, other):
        """self after other: (self.compose(other)).apply == self(other(p))."""
        return RigidTransform(R=self.R @ other.R, t=self.R @ other.t + self.t)


def apply_transform(transform, motion):
    """Apply a rigid transform to a motion (S, POSE_DIM) -> (S, POSE_DIM).

    The translation moves the root; the rotation premultiplies the global
    orientation. Joint-local rotations are untouched, so forward kinematics
    is equivariant: joints(out) == R @ joints(in) + t.
    """
    m = _as_motion(motion).copy()
    R, t = transform.R, transform.t
    m[:, TAU] = m[:, TAU] @ R.T + t
    g = rotmath.aa_to_mat(m[:, GLOBAL_AA])
    m[:, GLOBAL_AA] = rotmath.mat_to_aa(R[None] @ g)
    return m


def canonicalize(motion, skel):
    """Rigid transform putting the first-frame pelvis at the origin with the
    body facing +y (hip line along +x), z kept vertical.

    Returns (canonical_motion, transform); transform maps input coordinates to
    canonical coordinates. Raises ValueError when the first-frame hips project
    to a degenerate horizontal segment.
    """
    m = _as_motion(motion)
    joints = fk_joints(m[:1], skel)[0]
    pelvis = joints[PELVIS]
    d = joints[R_HIP] - joints[L_HIP]
    n = np.array([d[0], d[1], 0.0])
    nn = np.linalg.norm(n)
    if nn < 1e-6:
        raise ValueError("degenerate hip projection: first-frame hips are "
                         "vertically aligned, cannot canonicalize")
    x_l = n / nn
    z_l = np.array([0.0, 0.0, 1.0])
    y_l = np.array([-x_l[1], x_l[0], 0.0])               # z cross x
    R = np.stack([x_l, y_l, z_l])                        # rows
    transform = RigidTransform(R=R, t=R @ (-pelvis))
    return apply_transform(transform, m), transform


# ---------------------------------------------------------------------------
# Blending and concatenation


def blend_pose(pose_old, pose_new, gamma):
    """Blend two poses: geodesic on each rotation, lerp on translation.

    gamma=0 returns pose_old exactly, gamma=1 returns pose_new exactly.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    old = np.asarray(pose_old, dtype=np.float64)
    new = np.asarray(pose_new, dtype=np.float64)
    if gamma == 0.0:
        return old.copy()
    if gamma == 1.0:
        return new.copy()
    aa_old = _local_aa(old[None])[0]                     # (K, 3)
    aa_new = _local_aa(new[None])[0]
    m_old = rotmath.aa_to_mat(aa_old)
    m_new = rotmath.aa_to_mat(aa_new)
    rel = m_new @ np.swapaxes(m_old, -1, -2)
    blended = rotmath.aa_to_mat(gamma * rotmath.mat_to_aa(rel)) @ m_old
    aa = rotmath.mat_to_aa(blended)
    out = np.empty(POSE_DIM)
    out[GLOBAL_AA] = aa[0]
    out[JOINTS_AA] = aa[1:].reshape(-1)
    out[TAU] = (1.0 - gamma) * old[TAU] + gamma * new[TAU]
    return out


def blend_overlap(hist_tail, new_head):
    """Blend H history poses into H new poses with gamma_s = s/(H+1), s=1..H.

    Early frames stay close to history, late frames close to the new motion.
    """
    hist = _as_motion(hist_tail)
    new = _as_motion(new_head)
    if hist.shape != new.shape:
        raise ValueError(f"overlap shapes differ: {hist.shape} vs {new.shape}")
    H = hist.shape[0]
    out = np.empty_like(hist)
    for s in range(H):
        out[s] = blend_pose(hist[s], new[s], (s + 1) / (H + 1))
    return out


def concat_long_term(prev, blended, new_tail):
    """Assemble prev[:-H] ++ blended ++ new_tail, H = len(blended).

    prev frames outside the overlap are preserved bit-exactly. The caller is
    responsible for choosing H = min(len(prev), H_max) before blending.
    """
    prev = _as_motion(prev)
    blended = _as_motion(blended) if len(blended) else np.zeros((0, POSE_DIM))
    new_tail = _as_motion(new_tail) if len(new_tail) else np.zeros((0, POSE_DIM))
    H = blended.shape[0]
    if prev.shape[0] < H:
        raise ValueError(f"overlap {H} exceeds previous motion length {prev.shape[0]}")
    return np.vstack([prev[:prev.shape[0] - H], blended, new_tail])
