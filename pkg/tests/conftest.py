import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from geometry import CameraIntrinsics, Pose3, rot_exp  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(600.0, 600.0, 400.0, 300.0, 800, 600)


def looking_down(center) -> Pose3:
    """Camera at `center` with its optical axis along world -z."""
    return Pose3(rot_exp([np.pi, 0.0, 0.0]), np.asarray(center, dtype=float))


@pytest.fixture
def down_camera():
    return looking_down([0.0, 0.0, 2.0])
