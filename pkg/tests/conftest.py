import numpy as np
import pytest

from dipmotion import kinematics as kin
from dipmotion import scene as scene_mod
from dipmotion.diffusion import build_schedule
from dipmotion.prior import build_action_basis


@pytest.fixture(scope="session")
def skel():
    return kin.default_skeleton()


@pytest.fixture(scope="session")
def markers():
    return kin.default_markers()


@pytest.fixture(scope="session")
def schedule_1000():
    return build_schedule(1000)


@pytest.fixture(scope="session")
def schedule_150():
    return build_schedule(150)


@pytest.fixture(scope="session")
def loco_basis(skel):
    return build_action_basis("locomotion", skel)


@pytest.fixture(scope="session")
def loco_basis_small(skel):
    return build_action_basis("locomotion", skel, num_frames=24)


@pytest.fixture(scope="session")
def box_grid():
    obstacles = scene_mod.parse_obstacles(
        [{"type": "box", "center": [0.0, 1.5, 0.5],
          "half_extents": [0.5, 0.5, 0.5]}])
    return scene_mod.bake(obstacles, origin=(-4.0, -2.0, -0.5), spacing=0.25,
                          dims=(33, 33, 11))


def random_motion(rng, num_frames, angle_scale=0.3, tau_scale=0.5,
                  height=0.95):
    """Small random pose sequence around standing height."""
    m = np.zeros((num_frames, kin.POSE_DIM))
    m[:, :66] = rng.standard_normal((num_frames, 66)) * angle_scale
    m[:, 66:68] = rng.standard_normal((num_frames, 2)) * tau_scale
    m[:, 68] = height + rng.standard_normal(num_frames) * 0.1
    return m
