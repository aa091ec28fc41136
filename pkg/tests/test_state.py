import math

import numpy as np
import pytest

from gatenav.geometry import quat_normalize, so3_exp
from gatenav.state import (
    CornerLabel,
    Gate,
    GateDetection,
    GateMap,
    NoiseParams,
    NominalState,
    Trajectory,
    compose_state,
    state_boxminus,
    state_boxminus_full,
)

RNG = np.random.default_rng(7)


def random_state(rng):
    return NominalState(p=rng.normal(size=3), v=rng.normal(size=3),
                        q=quat_normalize(rng.normal(size=4)),
                        b_a=rng.normal(size=3) * 0.1,
                        b_w=rng.normal(size=3) * 0.01, t=0.0)


# -- compose / boxminus --------------------------------------------------------

def test_compose_zero_error_identity():
    x = random_state(RNG)
    y = compose_state(x, np.zeros(15))
    np.testing.assert_array_equal(y.p, x.p)
    np.testing.assert_array_equal(y.v, x.v)
    np.testing.assert_allclose(y.q, x.q, atol=1e-15)
    np.testing.assert_array_equal(y.b_a, x.b_a)
    np.testing.assert_array_equal(y.b_w, x.b_w)


def test_compose_yaw_quarter_turn():
    x = NominalState.at_pose([0, 0, 0], [1, 0, 0, 0])
    dx = np.zeros(15)
    dx[6:9] = [0, 0, math.pi / 2]
    y = compose_state(x, dx)
    np.testing.assert_allclose(y.q, so3_exp([0, 0, math.pi / 2]), atol=1e-12)


def test_compose_boxminus_roundtrip():
    for _ in range(100):
        x = random_state(RNG)
        dx = np.concatenate([RNG.normal(size=6),
                             RNG.uniform(-0.05, 0.05, 3),
                             RNG.normal(size=6) * 0.01])
        y = compose_state(x, dx)
        np.testing.assert_allclose(state_boxminus_full(y, x), dx, atol=1e-9)


def test_compose_preserves_unit_norm():
    for _ in range(200):
        x = random_state(RNG)
        y = compose_state(x, RNG.normal(size=15))
        assert abs(np.linalg.norm(y.q) - 1.0) < 1e-12


def test_compose_euclidean_blocks_exact():
    x = random_state(RNG)
    dx = RNG.normal(size=15)
    dx[6:9] = 0.0
    y = compose_state(x, dx)
    np.testing.assert_array_equal(y.p, x.p + dx[0:3])
    np.testing.assert_array_equal(y.v, x.v + dx[3:6])
    np.testing.assert_array_equal(y.b_a, x.b_a + dx[9:12])
    np.testing.assert_array_equal(y.b_w, x.b_w + dx[12:15])


def test_boxminus_self_is_zero():
    x = random_state(RNG)
    np.testing.assert_allclose(state_boxminus(x, x), np.zeros(6), atol=1e-12)


def test_boxminus_translation_only():
    a = NominalState.at_pose([1, 0, 0], [1, 0, 0, 0])
    b = NominalState.at_pose([0, 0, 0], [1, 0, 0, 0])
    np.testing.assert_allclose(state_boxminus(a, b), [1, 0, 0, 0, 0, 0],
                               atol=1e-15)


def test_boxminus_pose_blocks_consistent_with_compose():
    for _ in range(50):
        x = random_state(RNG)
        dx = np.zeros(15)
        dx[0:3] = RNG.normal(size=3)
        dx[6:9] = RNG.uniform(-0.08, 0.08, 3)
        y = compose_state(x, dx)
        d6 = state_boxminus(y, x)
        np.testing.assert_allclose(d6[:3], dx[0:3], atol=1e-12)
        np.testing.assert_allclose(d6[3:], dx[6:9], atol=1e-9)


# -- gates ----------------------------------------------------------------------

def test_gate_from_pose_hand_computed():
    # center (2,3,1.5), yaw 90 deg, 1.5 x 1.5 square: left axis is -x, up is z
    g = Gate.from_pose(3, [2.0, 3.0, 1.5], math.pi / 2, 0.0, 0.0, 1.5, 1.5)
    np.testing.assert_allclose(g.corners_w, [
        [1.25, 3.0, 2.25],   # TL
        [2.75, 3.0, 2.25],   # TR
        [2.75, 3.0, 0.75],   # BR
        [1.25, 3.0, 0.75],   # BL
    ], atol=1e-12)


def test_gate_coplanarity_rejects_1mm():
    g = Gate.from_pose(0, [0, 0, 0], 0.0, 0.0, 0.0, 1.5, 1.5)
    corners = g.corners_w.copy()
    corners[3] += np.array([1e-3, 0, 0])  # 1 mm out of the y-z plane
    with pytest.raises(ValueError, match="coplanar"):
        Gate(id=0, corners_w=corners)


def test_gate_rejects_coincident_corners():
    corners = np.zeros((4, 3))
    corners[1] = [1, 0, 0]
    corners[2] = [1, 0, 0]
    with pytest.raises(ValueError, match="coincide"):
        Gate(id=1, corners_w=corners)


def test_gate_map_unique_ids():
    g = Gate.from_pose(5, [0, 0, 0], 0, 0, 0, 1.5, 1.5)
    with pytest.raises(ValueError, match="unique"):
        GateMap(gates=[g, Gate.from_pose(5, [3, 0, 0], 0, 0, 0, 1.5, 1.5)])


# -- detections -------------------------------------------------------------------

def test_detection_present_iff_score_positive():
    px = np.full((4, 2), np.nan)
    px[0] = [10.0, 20.0]
    det = GateDetection(t=0.0, scores=[1.0, 0, 0, 0], corners_px=px)
    assert det.present_labels == [CornerLabel.TL]

    with pytest.raises(ValueError, match="at least one"):
        GateDetection(t=0.0, scores=[0, 0, 0, 0], corners_px=np.full((4, 2), np.nan))

    bad = np.full((4, 2), np.nan)  # score says present but position is NaN
    with pytest.raises(ValueError, match="iff"):
        GateDetection(t=0.0, scores=[1.0, 0, 0, 0], corners_px=bad)


def test_noise_params_validation():
    with pytest.raises(ValueError):
        NoiseParams(sigma_a=0.0)


# -- trajectory --------------------------------------------------------------------

def test_trajectory_interpolation():
    traj = Trajectory(
        t=[0.0, 1.0],
        p=[[0, 0, 0], [2, 0, 0]],
        v=[[1, 0, 0], [3, 0, 0]],
        q=[[1, 0, 0, 0], so3_exp([0, 0, 1.0])],
    )
    p, v, q = traj.interpolate(0.5)
    np.testing.assert_allclose(p, [1, 0, 0])
    np.testing.assert_allclose(v, [2, 0, 0])
    np.testing.assert_allclose(q, so3_exp([0, 0, 0.5]), atol=1e-12)
    assert traj.interpolate(2.0) is None
    assert traj.gap_at(0.5) == 1.0
