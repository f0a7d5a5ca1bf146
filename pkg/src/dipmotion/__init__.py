"""Long-term motion synthesis by guided iterative denoising in 3D scenes."""

import os as _os

from .diffusion import (Condition, Denoiser, InpaintSpec, KeyframeHints,
                        NoiseSchedule, apply_inpaint, build_schedule,
                        forward_noise, posterior_mean, posterior_sample)
from .dip import GuidanceConfig, SynthesisResult, synthesize
from .kinematics import (MarkerSet, MotionClip, RigidTransform, Skeleton,
                         blend_overlap, blend_pose, canonicalize,
                         concat_long_term, default_markers, default_skeleton,
                         fk_joints, fk_markers, fk_vjp, standing_pose)
from .metrics import MetricsReport, report
from .planner import (PlanResult, ScenarioRunError, ScenarioScript, SubTask,
                      load_script, run_scenario)
from .prior import MotionBasis, ProjectionDenoiser, build_action_basis
from .rewards import (RewardBreakdown, RewardConfig, RewardContext,
                      fd_gradient_oracle, for_action, r_total, r_total_value)
from .scene import SceneFormatError, SdfGrid, bake, bake_spec, load_grid

__version__ = "0.1.0"

_ASSET_DIR = _os.path.join(_os.path.dirname(__file__), "assets")


def asset_path(name):
    """Absolute path of a bundled asset (scene spec, scenario, skeleton)."""
    path = _os.path.join(_ASSET_DIR, name)
    if not _os.path.exists(path):
        raise FileNotFoundError(f"no bundled asset {name!r}")
    return path

__all__ = [
    "Condition", "Denoiser", "InpaintSpec", "KeyframeHints", "NoiseSchedule",
    "apply_inpaint", "build_schedule", "forward_noise", "posterior_mean",
    "posterior_sample", "GuidanceConfig", "SynthesisResult", "synthesize",
    "MarkerSet", "MotionClip", "RigidTransform", "Skeleton", "blend_overlap",
    "blend_pose", "canonicalize", "concat_long_term", "default_markers",
    "default_skeleton", "fk_joints", "fk_markers", "fk_vjp", "standing_pose",
    "MetricsReport", "report", "PlanResult", "ScenarioRunError",
    "ScenarioScript", "SubTask", "load_script", "run_scenario", "MotionBasis",
    "ProjectionDenoiser", "build_action_basis", "RewardBreakdown",
    "RewardConfig", "RewardContext", "fd_gradient_oracle", "for_action",
    "r_total", "r_total_value", "SceneFormatError", "SdfGrid", "bake",
    "bake_spec", "load_grid", "__version__",
]
