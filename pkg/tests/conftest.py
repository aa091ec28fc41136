import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gatenav.geometry import CameraModel, Extrinsics
from gatenav.pipeline import default_camera, default_extrinsics
from gatenav.state import Gate, GateMap, NominalState


@pytest.fixture
def cam():
    return default_camera()


@pytest.fixture
def cam_distorted():
    return CameraModel(fx=400.0, fy=402.0, cx=410.0, cy=308.0,
                       width=820, height=616,
                       k1=-0.08, k2=0.012, p1=4e-4, p2=-3e-4)


@pytest.fixture
def ext():
    return default_extrinsics()


@pytest.fixture
def front_gate():
    """1.5 m square gate 5 m ahead of the origin, facing along +x."""
    return Gate.from_pose(0, [5.0, 0.0, 1.5], 0.0, 0.0, 0.0, 1.5, 1.5)


@pytest.fixture
def level_state():
    """Body at the gate height, identity attitude, at rest."""
    return NominalState.at_pose([0.0, 0.0, 1.5], [1.0, 0.0, 0.0, 0.0])


@pytest.fixture
def small_map(front_gate):
    second = Gate.from_pose(1, [10.0, 2.0, 1.5], 0.4, 0.0, 0.0, 1.5, 1.5)
    return GateMap(gates=[front_gate, second])
