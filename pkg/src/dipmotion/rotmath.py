"""Rotation algebra on axis-angle vectors and 3x3 matrices.

Conventions:
    * axis-angle vectors ``a`` encode a rotation of ``|a|`` radians about
      ``a / |a|``; the canonical representative has angle in ``[0, pi]``,
      and at exactly pi the axis sign is fixed so that the component of
      largest magnitude is positive.
    * matrices are right-handed rotation matrices acting on column vectors.

All operations broadcast over leading axes and work in float64.
"""

from __future__ import annotations

import numpy as np

# Below this angle the exponential/log maps use their Taylor branches.
TINY_ANGLE = 1e-8
# Crossover between closed-form coefficient formulas (cancellation-prone at
# small angles) and their truncated series; both sides are accurate to ~4e-9
# relative at the boundary.
_SERIES_CUTOFF = 0.2
# Orthonormality tolerance for matrix inputs.
ORTHO_TOL = 1e-4


def skew(v):
    """Skew-symmetric matrix [v]x such that [v]x @ u = v x u. (..., 3) -> (..., 3, 3)."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3), dtype=np.float64)
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _coeffs(theta, order):
    """Scalar coefficient functions of the rotation exponential and its derivatives.

    order 0 returns (f1, f2) with R = I + f1*[a]x + f2*[a]x^2.
    order 1 adds (g1, g2) = (f1'/theta, f2'/theta).
    order 2 adds (h1, h2) = (g1'/theta, g2'/theta).
    """
    t = np.asarray(theta, dtype=np.float64)
    t2 = t * t
    small = t < _SERIES_CUTOFF
    # Avoid division warnings on the masked-out lanes.
    ts = np.where(small, 1.0, t)
    sin, cos = np.sin(ts), np.cos(ts)

    f1 = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, sin / ts)
    f2 = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - cos) / ts**2)
    out = [f1, f2]
    if order >= 1:
        g1 = np.where(small, -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0,
                      (ts * cos - sin) / ts**3)
        g2 = np.where(small, -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0,
                      (ts * sin + 2.0 * cos - 2.0) / ts**4)
        out += [g1, g2]
    if order >= 2:
        h1 = np.where(small, 1.0 / 15.0 - t2 / 210.0 + t2 * t2 / 7560.0,
                      (3.0 * sin - 3.0 * ts * cos - ts**2 * sin) / ts**5)
        h2 = np.where(small, 1.0 / 90.0 - t2 / 1680.0 + t2 * t2 / 75600.0,
                      (ts**2 * cos - 5.0 * ts * sin - 8.0 * cos + 8.0) / ts**6)
        out += [h1, h2]
    return out


def aa_to_mat(a):
    """Rotation matrix of an axis-angle vector. (..., 3) -> (..., 3, 3)."""
    a = np.asarray(a, dtype=np.float64)
    theta = np.linalg.norm(a, axis=-1)
    f1, f2 = _coeffs(theta, 0)
    A = skew(a)
    A2 = A @ A
    eye = np.broadcast_to(np.eye(3), A.shape)
    return eye + f1[..., None, None] * A + f2[..., None, None] * A2


def is_rotation(m, tol=ORTHO_TOL):
    """True where m is orthonormal with determinant +1 within tol."""
    m = np.asarray(m, dtype=np.float64)
    gram = np.swapaxes(m, -1, -2) @ m
    err = np.linalg.norm(gram - np.eye(3), axis=(-2, -1))
    return (err <= tol) & (np.linalg.det(m) > 0.0)


def mat_to_aa(m, tol=ORTHO_TOL):
    """Canonical axis-angle of a rotation matrix. (..., 3, 3) -> (..., 3).

    Raises ValueError if any input fails the orthonormality check. The angle
    is recovered with atan2 so it is accurate over all of [0, pi]; near pi the
    axis comes from the symmetric part, with the sign convention described in
    the module docstring.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3) rotation matrices, got {m.shape}")
    lead = m.shape[:-2]
    mf = m.reshape((-1, 3, 3))
    if not np.all(is_rotation(mf, tol)):
        raise ValueError("input is not orthonormal within %g" % tol)

    w = 0.5 * np.stack([
        mf[:, 2, 1] - mf[:, 1, 2],
        mf[:, 0, 2] - mf[:, 2, 0],
        mf[:, 1, 0] - mf[:, 0, 1],
    ], axis=-1)
    s = np.linalg.norm(w, axis=-1)                      # sin(theta)
    tr = mf[:, 0, 0] + mf[:, 1, 1] + mf[:, 2, 2]
    c = np.clip((np.clip(tr, -1.0, 3.0) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arctan2(np.clip(s, 0.0, 1.0), c)

    out = np.zeros((mf.shape[0], 3), dtype=np.float64)
    tiny = theta < TINY_ANGLE
    mid = ~tiny & (theta < 3.0)
    big = ~tiny & ~mid

    # theta ~ 0: a = w * theta/sin(theta) ~ w * (1 + theta^2/6)
    out[tiny] = w[tiny] * (1.0 + theta[tiny] ** 2 / 6.0)[:, None]
    if np.any(mid):
        out[mid] = w[mid] * (theta[mid] / s[mid])[:, None]
    for row in np.nonzero(big)[0]:
        # Near pi: axis magnitudes from the symmetric part, signs from its
        # off-diagonals; overall sign follows w when sin is usable, else the
        # canonical largest-magnitude-positive rule.
        mb, cb, wb, sb, tb = mf[row], c[row], w[row], s[row], theta[row]
        n = np.sqrt(np.clip((np.diag(mb) - cb) / (1.0 - cb), 0.0, None))
        sym = 0.5 * (mb + mb.T)
        kk = int(np.argmax(n))
        for j in range(3):
            if j != kk and sym[j, kk] < 0.0:
                n[j] = -n[j]
        if sb > 1e-9:
            if float(np.dot(n, wb)) < 0.0:
                n = -n
        elif n[np.argmax(np.abs(n))] < 0.0:
            n = -n
        out[row] = tb * n
    return out.reshape(lead + (3,))


def mat_power(m, gamma):
    """Fractional power M^gamma for gamma in [0, 1] via angle scaling."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if gamma == 0.0:
        m = np.asarray(m, dtype=np.float64)
        return np.broadcast_to(np.eye(3), m.shape).copy()
    return aa_to_mat(gamma * mat_to_aa(m))


def blend_rot(m_old, m_new, gamma):
    """Geodesic blend (M_new M_old^-1)^gamma M_old.

    gamma=0 returns m_old exactly and gamma=1 returns m_new exactly (the
    endpoints bypass the log/exp round trip). The blend is symmetric:
    blend_rot(A, B, g) == blend_rot(B, A, 1-g).
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    m_old = np.asarray(m_old, dtype=np.float64)
    m_new = np.asarray(m_new, dtype=np.float64)
    if gamma == 0.0:
        return m_old.copy()
    if gamma == 1.0:
        return m_new.copy()
    rel = m_new @ np.swapaxes(m_old, -1, -2)
    return mat_power(rel, gamma) @ m_old


def rotation_jacobian(a):
    """Derivative of aa_to_mat: tensor D with D[..., i, :, :] = dR/da_i."""
    a = np.asarray(a, dtype=np.float64)
    theta = np.linalg.norm(a, axis=-1)
    f1, f2, g1, g2 = _coeffs(theta, 1)
    A = skew(a)
    A2 = A @ A
    E = skew(np.eye(3))                                   # (3, 3, 3), E[i] = skew(e_i)
    # dR/da_i = a_i (g1 A + g2 A^2) + f1 E_i + f2 (E_i A + A E_i)
    core = g1[..., None, None] * A + g2[..., None, None] * A2   # (..., 3, 3)
    D = a[..., :, None, None] * core[..., None, :, :]
    D = D + f1[..., None, None, None] * E
    EA = np.einsum('ibk,...kc->...ibc', E, A)
    AE = np.einsum('...bk,ikc->...ibc', A, E)
    D = D + f2[..., None, None, None] * (EA + AE)
    return D


def rotation_jacobian_dir(a, v):
    """Directional derivative of rotation_jacobian along tangent v.

    Returns T with T[..., i, :, :] = d/d eps dR/da_i (a + eps v) at eps=0.
    Needed for exact second-order chain rules through forward kinematics.
    """
    a = np.asarray(a, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(a, axis=-1)
    f1, f2, g1, g2, h1, h2 = _coeffs(theta, 2)
    av = np.einsum('...i,...i->...', a, v)
    A = skew(a)
    A2 = A @ A
    V = skew(v)
    VA = V @ A
    AV = A @ V
    E = skew(np.eye(3))
    core = g1[..., None, None] * A + g2[..., None, None] * A2
    dcore = (h1 * av)[..., None, None] * A + g1[..., None, None] * V \
        + (h2 * av)[..., None, None] * A2 + g2[..., None, None] * (VA + AV)
    T = v[..., :, None, None] * core[..., None, :, :]
    T = T + a[..., :, None, None] * dcore[..., None, :, :]
    T = T + (g1 * av)[..., None, None, None] * E
    EA = np.einsum('ibk,...kc->...ibc', E, A)
    AE = np.einsum('...bk,ikc->...ibc', A, E)
    EV = np.einsum('ibk,...kc->...ibc', E, V)
    VE = np.einsum('...bk,ikc->...ibc', V, E)
    T = T + (g2 * av)[..., None, None, None] * (EA + AE)
    T = T + f2[..., None, None, None] * (EV + VE)
    return T


def rot_x(angle):
    """Rotation about the x axis."""
    return aa_to_mat(np.array([angle, 0.0, 0.0]))


def rot_y(angle):
    """Rotation about the y axis."""
    return aa_to_mat(np.array([0.0, angle, 0.0]))


def rot_z(angle):
    """Rotation about the z axis."""
    return aa_to_mat(np.array([0.0, 0.0, angle]))
