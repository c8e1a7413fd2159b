import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from src.core.geom_core import Intrinsics  # noqa: E402
from src.core.scene_synth import (CameraView, default_pairing, emit_view_bundles, look_at_pose,  # noqa: E402
                                  scene_from_footprint)

settings.register_profile(
    "default",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

IMAGE_WIDTH = 64
IMAGE_HEIGHT = 48
CEILING = 2.5

BOX_FOOTPRINT = [(0.0, 0.0), (4.0, 0.0), (4.0, 3.0), (0.0, 3.0)]
L_FOOTPRINT = [(0.0, 0.0), (6.0, 0.0), (6.0, 3.0), (3.0, 3.0), (3.0, 6.0), (0.0, 6.0)]

# (眼睛位置, 目标角点)，坐标为 (x, z)
BOX_CAMERAS = [((1.0, 0.8), (4.0, 3.0)), ((3.0, 0.9), (0.0, 3.0)),
               ((2.2, 2.3), (0.0, 0.0)), ((1.8, 2.1), (4.0, 0.0))]
L_CAMERAS = [((1.5, 1.5), (6.0, 0.0)), ((2.0, 1.0), (6.0, 3.0)), ((1.5, 4.5), (3.0, 6.0)),
             ((2.0, 5.0), (0.0, 6.0)), ((4.5, 1.5), (0.0, 0.0))]


def make_camera(eye, target, eye_height=1.3, target_height=1.25,
                width=IMAGE_WIDTH, height=IMAGE_HEIGHT, hfov=90.0) -> CameraView:
    pose = look_at_pose([eye[0], eye_height, eye[1]], [target[0], target_height, target[1]])
    return CameraView(pose, Intrinsics.from_fov(width, height, hfov), width, height)


def make_scene(footprint, placements):
    cameras = [make_camera(eye, target) for eye, target in placements]
    return scene_from_footprint(footprint, CEILING, cameras)


@pytest.fixture
def box_scene():
    return make_scene(BOX_FOOTPRINT, BOX_CAMERAS)


@pytest.fixture
def l_scene():
    return make_scene(L_FOOTPRINT, L_CAMERAS)


@pytest.fixture
def box_bundles(box_scene):
    return emit_view_bundles(box_scene, default_pairing(len(box_scene.cameras)), 0.0, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
