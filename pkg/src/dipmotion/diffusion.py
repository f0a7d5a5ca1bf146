"""Diffusion noising/denoising machinery for motion arrays.

A motion is an (S, 69) float64 array. Schedules index timesteps t = 1..T
with arrays of length T+1 so that alpha_bars[0] = 1 and betas[0] = 0; this
makes the final reverse step deterministic (beta_tilde[1] = 0) and lets
t = 0 denote the clean sample. Schedules built with fewer steps than the
1000-step reference are calibrated so the terminal noise level matches the
reference chain.
"""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np

BETA_START = 1e-4
BETA_END = 0.02
REFERENCE_STEPS = 1000
BETA_CAP = 0.999
T_INPAINT = 50


def _log_abar_final(num_steps, beta_start, beta_end):
    betas = np.linspace(beta_start, beta_end, num_steps)
    return float(np.sum(np.log1p(-np.minimum(betas, BETA_CAP))))


def reference_log_abar():
    """log(alpha_bar_T) of the 1000-step reference schedule."""
    return _log_abar_final(REFERENCE_STEPS, BETA_START, BETA_END)


def _calibrate_scale(num_steps, target):
    """Find s so that linspace(s*BETA_START, s*BETA_END, num_steps) reaches
    the target terminal log(alpha_bar). Monotone in s; solved by bisection."""

    def f(s):
        return _log_abar_final(num_steps, s * BETA_START, s * BETA_END) - target

    lo, hi = 0.0, 1.0
    while f(hi) > 0.0:
        hi *= 2.0
        if hi > 1e9:
            raise ValueError(f"cannot reach reference noise level in "
                             f"{num_steps} steps")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclasses.dataclass(frozen=True)
class NoiseSchedule:
    """Arrays of length num_steps+1, indexed by timestep t.

    Index 0 is the clean sample: betas[0] = 0, alpha_bars[0] = 1,
    beta_tilde[0] = beta_tilde[1] = 0.
    """

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    beta_tilde: np.ndarray

    @property
    def num_steps(self):
        return self.betas.shape[0] - 1


def build_schedule(num_steps, beta_start=None, beta_end=None):
    """Linear beta schedule over num_steps timesteps.

    With explicit endpoints they are used literally. With defaults, the
    1000-step endpoints are used directly at num_steps = 1000 and rescaled
    for other step counts so alpha_bar at the final step matches the
    reference; a beta that would exceed 0.999 is capped with a warning.
    """
    num_steps = int(num_steps)
    if num_steps < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    explicit = beta_start is not None or beta_end is not None
    if explicit:
        if beta_start is None or beta_end is None:
            raise ValueError("give both beta endpoints or neither")
        if not (0.0 < beta_start <= beta_end < 1.0):
            raise ValueError(f"need 0 < beta_start <= beta_end < 1, got "
                             f"{beta_start}, {beta_end}")
        start, end = float(beta_start), float(beta_end)
    elif num_steps == REFERENCE_STEPS:
        start, end = BETA_START, BETA_END
    else:
        s = _calibrate_scale(num_steps, reference_log_abar())
        start, end = s * BETA_START, s * BETA_END
    if num_steps == 1:
        core = np.array([start])
    else:
        core = np.linspace(start, end, num_steps)
    if core.max() > BETA_CAP:
        warnings.warn(f"capping betas at {BETA_CAP}; schedule with "
                      f"{num_steps} steps cannot reach the target endpoint",
                      stacklevel=2)
        core = np.minimum(core, BETA_CAP)
    betas = np.concatenate([[0.0], core])
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    beta_tilde = np.zeros_like(betas)
    beta_tilde[1:] = (1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:]) * betas[1:]
    for arr in (betas, alphas, alpha_bars, beta_tilde):
        arr.flags.writeable = False
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars,
                         beta_tilde=beta_tilde)


def _check_t(t, schedule):
    if not 1 <= t <= schedule.num_steps:
        raise ValueError(f"timestep {t} outside 1..{schedule.num_steps}")


def forward_noise(x0, t, schedule, rng=None, noise=None):
    """Sample x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    _check_t(t, schedule)
    x0 = np.asarray(x0, dtype=np.float64)
    if noise is None:
        if rng is None:
            raise ValueError("need rng or explicit noise")
        noise = rng.standard_normal(x0.shape)
    abar = schedule.alpha_bars[t]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise


def posterior_mean(x0_hat, x_t, t, schedule):
    """Mean of q(x_{t-1} | x_t, x0_hat). At t = 1 this is x0_hat exactly."""
    _check_t(t, schedule)
    num = 1.0 - schedule.alpha_bars[t - 1]
    if num == 0.0:
        return np.array(x0_hat, dtype=np.float64, copy=True)
    den = 1.0 - schedule.alpha_bars[t]
    c0 = np.sqrt(schedule.alpha_bars[t - 1]) * schedule.betas[t] / den
    ct = np.sqrt(schedule.alphas[t]) * num / den
    return c0 * np.asarray(x0_hat, dtype=np.float64) \
        + ct * np.asarray(x_t, dtype=np.float64)


def posterior_sample(mu, t, schedule, rng):
    """Draw x_{t-1} ~ N(mu, beta_tilde_t I). Deterministic at t = 1; no rng
    values are consumed there."""
    _check_t(t, schedule)
    var = schedule.beta_tilde[t]
    if var == 0.0:
        return np.array(mu, dtype=np.float64, copy=True)
    return mu + np.sqrt(var) * rng.standard_normal(np.shape(mu))


def apply_inpaint(x0_hat, spec, t, t_inpaint=T_INPAINT):
    """Overwrite masked coordinates of x0_hat with the known values while
    t > t_inpaint; below that the estimate is left untouched so the last
    steps can reconcile the seam."""
    if spec is None or t <= t_inpaint:
        return np.asarray(x0_hat, dtype=np.float64)
    out = np.array(x0_hat, dtype=np.float64, copy=True)
    out[spec.mask] = spec.values[spec.mask]
    return out


@dataclasses.dataclass(frozen=True)
class KeyframeHints:
    """Sparse joint-position targets: values[s, k] is used iff valid[s, k]."""

    values: np.ndarray                  # (S, K, 3) float64
    valid: np.ndarray                   # (S, K) bool

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 3 or values.shape[2] != 3:
            raise ValueError(f"values must be (S, K, 3), got {values.shape}")
        if valid.shape != values.shape[:2]:
            raise ValueError(f"valid shape {valid.shape} does not match "
                             f"values {values.shape}")
        if np.any(values[~valid] != 0.0):
            raise ValueError("hint values must be zero where invalid")
        values.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def none(cls, num_frames, num_joints):
        return cls(values=np.zeros((num_frames, num_joints, 3)),
                   valid=np.zeros((num_frames, num_joints), dtype=bool))

    @property
    def count(self):
        return int(self.valid.sum())


@dataclasses.dataclass(frozen=True)
class InpaintSpec:
    """Known pose coordinates to clamp during early denoising."""

    mask: np.ndarray                    # (S, POSE_DIM) bool
    values: np.ndarray                  # (S, POSE_DIM) float64

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        values = np.asarray(self.values, dtype=np.float64)
        if mask.shape != values.shape or mask.ndim != 2:
            raise ValueError(f"mask {mask.shape} and values {values.shape} "
                             f"must be equal 2-d shapes")
        mask.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "values", values)


@dataclasses.dataclass(frozen=True)
class Condition:
    """What the denoiser is conditioned on."""

    action: str
    hints: KeyframeHints | None = None


class Denoiser:
    """Denoiser contract: predict the clean motion and pull back cotangents.

    Subclasses must implement predict_x0; vjp has a finite-difference
    default so any denoiser is usable for guidance, if slowly.
    """

    def predict_x0(self, x_t, t, cond=None):
        raise NotImplementedError

    def vjp(self, x_t, t, cond, cotangent, fd_step=1e-4):
        """Gradient of <predict_x0(x_t, t, cond), cotangent> with respect to
        x_t, by central differences coordinate by coordinate."""
        x_t = np.asarray(x_t, dtype=np.float64)
        u = np.asarray(cotangent, dtype=np.float64)
        grad = np.zeros_like(x_t)
        flat = grad.ravel()
        probe = x_t.copy()
        pflat = probe.ravel()
        for i in range(pflat.size):
            base = pflat[i]
            pflat[i] = base + fd_step
            hi = float(np.sum(self.predict_x0(probe, t, cond) * u))
            pflat[i] = base - fd_step
            lo = float(np.sum(self.predict_x0(probe, t, cond) * u))
            pflat[i] = base
            flat[i] = (hi - lo) / (2.0 * fd_step)
        return grad
