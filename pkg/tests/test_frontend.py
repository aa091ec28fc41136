import itertools
import math

import numpy as np
import pytest

from gatenav.frontend import (
    QUADRANT_SIGNS,
    VisionConfig,
    _gate_candidates,
    associate,
    association_cost,
    build_measurements,
    image_up_right,
    reorder_corners,
    resolve_flip,
)
from gatenav.geometry import project, quat_multiply, so3_exp, world_to_camera
from gatenav.state import LABELS, CornerLabel, Gate, GateDetection, GateMap, NominalState
from oracles import brute_force_assignment

RNG = np.random.default_rng(99)
CFG = VisionConfig()


def detection_from_pose(gate, state, ext, labels=None, scores=None, t=0.0):
    """Exact normalized-coordinate detection of a gate from a given pose.

    labels optionally remaps where each map corner lands in the detection
    (labels[i] = slot receiving map corner i).
    """
    labels = labels if labels is not None else [0, 1, 2, 3]
    scores = scores if scores is not None else [1.0] * 4
    nm = np.full((4, 2), np.nan)
    sc = np.zeros(4)
    for i in range(4):
        if scores[i] <= 0:
            continue
        nm[labels[i]] = project(world_to_camera(gate.corners_w[i], state.p,
                                                state.q, ext))
        sc[labels[i]] = scores[i]
    return GateDetection(t=t, scores=sc, corners_norm=nm)


def add_pixels(det, cam):
    from gatenav.geometry import distort_to_pixel
    px = np.full((4, 2), np.nan)
    for lab in det.present_labels:
        px[lab] = distort_to_pixel(det.corners_norm[lab], cam)
    det.corners_px = px
    return det


# -- image up / right ---------------------------------------------------------

def test_up_vector_level_attitude(level_state, ext):
    mu_up, mu_right = image_up_right(level_state, ext, [0.0, 0.0], CFG)
    np.testing.assert_allclose(mu_up, [0, -1], atol=1e-9)
    np.testing.assert_allclose(mu_right, [1, 0], atol=1e-9)


@pytest.mark.parametrize("roll", [math.pi / 2, -math.pi / 2])
def test_up_vector_90deg_roll(ext, roll):
    state = NominalState.at_pose([0, 0, 1.5], so3_exp([roll, 0, 0]))
    mu_up, _ = image_up_right(state, ext, [0.0, 0.0], CFG)
    # world up now maps to a horizontal image direction
    assert abs(abs(mu_up[0]) - 1.0) < 1e-9
    assert abs(mu_up[1]) < 1e-9


def test_mu_right_is_quarter_turn_of_mu_up(ext):
    for _ in range(20):
        state = NominalState.at_pose(RNG.normal(size=3),
                                     so3_exp(RNG.uniform(-0.6, 0.6, 3)))
        mu_up, mu_right = image_up_right(state, ext,
                                         RNG.uniform(-0.3, 0.3, 2), CFG)
        np.testing.assert_array_equal(mu_right, [-mu_up[1], mu_up[0]])


# -- reorder -------------------------------------------------------------------

def square_detection(t=0.0, shuffle=None):
    """Axis-aligned unit square in normalized coordinates (v grows downward)."""
    pts = {
        CornerLabel.TL: [-0.1, -0.1],
        CornerLabel.TR: [0.1, -0.1],
        CornerLabel.BR: [0.1, 0.1],
        CornerLabel.BL: [-0.1, 0.1],
    }
    nm = np.full((4, 2), np.nan)
    order = shuffle if shuffle is not None else list(LABELS)
    for src, dst in zip(LABELS, order):
        nm[dst] = pts[src]
    return GateDetection(t=t, scores=[1.0] * 4, corners_norm=nm)


def test_reorder_axis_aligned_square():
    det = square_detection()
    out = reorder_corners(det, np.array([0.0, -1.0]), np.array([1.0, 0.0]))
    np.testing.assert_array_equal(out.corners_norm, det.corners_norm)


def test_reorder_restores_shuffled_labels():
    canonical = square_detection()
    for shuffle in itertools.permutations(LABELS):
        det = square_detection(shuffle=list(shuffle))
        out = reorder_corners(det, np.array([0.0, -1.0]), np.array([1.0, 0.0]))
        np.testing.assert_allclose(out.corners_norm, canonical.corners_norm)


def test_reorder_under_80deg_roll(front_gate, ext):
    """With a rolled camera, gravity-aware reordering recovers the physical
    labels while fixed pixel-quadrant labeling gets them wrong."""
    roll = math.radians(80.0)
    state = NominalState.at_pose([0, 0, 1.5], so3_exp([roll, 0, 0]))
    truth = detection_from_pose(front_gate, state, ext)
    scrambled = truth.replace_slots(
        {LABELS[i]: LABELS[[2, 0, 3, 1][i]] for i in range(4)})

    mu_up, mu_right = image_up_right(
        state, ext, truth.corners_norm.mean(axis=0), CFG)
    out = reorder_corners(scrambled, mu_up, mu_right)
    np.testing.assert_allclose(out.corners_norm, truth.corners_norm, atol=1e-12)

    naive = reorder_corners(scrambled, np.array([0.0, -1.0]), np.array([1.0, 0.0]))
    assert not np.allclose(naive.corners_norm, truth.corners_norm,
                           equal_nan=True)


def test_reorder_is_permutation_and_idempotent():
    for _ in range(50):
        n = RNG.integers(2, 5)
        labs = list(RNG.choice(4, size=n, replace=False))
        nm = np.full((4, 2), np.nan)
        sc = np.zeros(4)
        for lab in labs:
            nm[lab] = RNG.uniform(-0.4, 0.4, 2)
            sc[lab] = RNG.uniform(0.3, 1.0)
        det = GateDetection(t=0.0, scores=sc, corners_norm=nm)
        ang = RNG.uniform(0, 2 * math.pi)
        mu_up = np.array([math.cos(ang), math.sin(ang)])
        mu_right = np.array([-mu_up[1], mu_up[0]])
        once = reorder_corners(det, mu_up, mu_right)
        # same multiset of corner positions in and out
        got = sorted(map(tuple, once.corners_norm[once.present]))
        want = sorted(map(tuple, det.corners_norm[det.present]))
        np.testing.assert_allclose(got, want)
        twice = reorder_corners(once, mu_up, mu_right)
        np.testing.assert_array_equal(twice.corners_norm[twice.present],
                                      once.corners_norm[once.present])


# -- association ------------------------------------------------------------------

def test_associate_exact_match(front_gate, level_state, ext, cam):
    det = add_pixels(detection_from_pose(front_gate, level_state, ext), cam)
    pairs = associate([det], GateMap(gates=[front_gate]), level_state, ext,
                      cam, CFG)
    assert len(pairs) == 1 and pairs[0][1].id == front_gate.id


def test_associate_rejects_80px_offset(front_gate, level_state, ext, cam):
    det = add_pixels(detection_from_pose(front_gate, level_state, ext), cam)
    det.corners_px = det.corners_px + np.array([80.0, 0.0])
    det.corners_norm = None
    pairs = associate([det], GateMap(gates=[front_gate]), level_state, ext,
                      cam, CFG)
    assert pairs == []


def test_associate_prefers_near_gate_on_shared_ray(level_state, ext, cam):
    near = Gate.from_pose(0, [4.0, 0.0, 1.5], 0, 0, 0, 1.5, 1.5)
    far = Gate.from_pose(1, [12.0, 0.0, 1.5], 0, 0, 0, 1.5, 1.5)
    gate_map = GateMap(gates=[near, far])
    det = add_pixels(detection_from_pose(near, level_state, ext), cam)

    cands = _gate_candidates(gate_map, level_state, ext, cam, CFG)
    by_id = {g.id: px for g, px in cands}
    _, _, rho_near = association_cost(det.corners_px, det.present_labels,
                                      by_id[0], CFG)
    cost_far, _, rho_far = association_cost(det.corners_px, det.present_labels,
                                            by_id[1], CFG)
    assert rho_near > 0.85
    assert rho_far < 0.2 and cost_far >= 1e12  # fails the area-consistency gate

    pairs = associate([det], gate_map, level_state, ext, cam, CFG)
    assert len(pairs) == 1 and pairs[0][1].id == 0


def _random_instance(rng, cam, ext):
    n_gates = int(rng.integers(1, 7))
    gates = []
    for gid in range(n_gates):
        center = np.array([rng.uniform(3, 14), rng.uniform(-4, 4),
                           rng.uniform(0.5, 3.0)])
        gates.append(Gate.from_pose(gid, center, rng.uniform(-0.5, 0.5), 0, 0,
                                    1.5, 1.5))
    gate_map = GateMap(gates=gates)
    state = NominalState.at_pose(
        [rng.uniform(-1, 1), rng.uniform(-1, 1), 1.5],
        so3_exp(rng.uniform(-0.1, 0.1, 3)))
    dets = []
    n_dets = int(rng.integers(1, 5))
    for _ in range(n_dets):
        src = gates[int(rng.integers(0, n_gates))]
        try:
            det = detection_from_pose(src, state, ext)
        except Exception:
            continue
        det = add_pixels(det, cam)
        # pixel jitter, occasionally large enough to cross the 75 px gate
        det.corners_px = det.corners_px + rng.normal(0, 25.0, (4, 2))
        det.corners_norm = None
        dets.append(det)
    return dets, gate_map, state


def test_associate_matches_brute_force(cam, ext):
    rng = np.random.default_rng(1234)
    checked = 0
    for _ in range(60):
        dets, gate_map, state = _random_instance(rng, cam, ext)
        if not dets:
            continue
        cands = _gate_candidates(gate_map, state, ext, cam, CFG)
        if not cands:
            continue
        cost = np.full((len(dets), len(cands)), 1e12)
        for i, det in enumerate(dets):
            from gatenav.frontend import _detection_pixels
            px = _detection_pixels(det, cam)
            for j, (_, gpx) in enumerate(cands):
                cost[i, j], _, _ = association_cost(px, det.present_labels,
                                                    gpx, CFG)
        card, total, _ = brute_force_assignment(cost)
        pairs = associate(dets, gate_map, state, ext, cam, CFG)
        got_total = 0.0
        gate_ids = [g.id for g, _ in cands]
        used = set()
        for det, gate in pairs:
            i = next(k for k, d in enumerate(dets) if d is det)
            j = gate_ids.index(gate.id)
            assert cost[i, j] < 1e12          # every accepted pair is feasible
            assert gate.id not in used        # one-to-one
            used.add(gate.id)
            got_total += cost[i, j]
        assert len(pairs) == card
        assert abs(got_total - total) < 1e-9
        checked += 1
    assert checked >= 30


# -- flip resolution -----------------------------------------------------------------

def test_resolve_flip_front_view_unchanged(front_gate, level_state, ext, cam):
    det = detection_from_pose(front_gate, level_state, ext)
    out = resolve_flip(det, front_gate, level_state, ext, cam)
    np.testing.assert_array_equal(out.corners_norm, det.corners_norm)


def test_resolve_flip_rear_view_swaps(front_gate, ext, cam):
    state = NominalState.at_pose([10.0, 0.0, 1.5], so3_exp([0, 0, math.pi]))
    # a front-trained detector reports mirrored labels from behind
    apparent = detection_from_pose(front_gate, state, ext,
                                   labels=[1, 0, 3, 2])
    out = resolve_flip(apparent, front_gate, state, ext, cam)
    for lab in LABELS:
        proj = project(world_to_camera(front_gate.corners_w[lab], state.p,
                                       state.q, ext))
        np.testing.assert_allclose(out.corners_norm[lab], proj, atol=1e-12)


def test_resolve_flip_tie_keeps_original(front_gate, level_state, ext, cam):
    det = detection_from_pose(front_gate, level_state, ext)
    top_mid = 0.5 * (det.corners_norm[0] + det.corners_norm[1])
    bot_mid = 0.5 * (det.corners_norm[2] + det.corners_norm[3])
    nm = np.array([top_mid, top_mid, bot_mid, bot_mid])
    sym = GateDetection(t=0.0, scores=[1.0] * 4, corners_norm=nm)
    out = resolve_flip(sym, front_gate, level_state, ext, cam)
    np.testing.assert_array_equal(out.corners_norm, sym.corners_norm)


# -- build_measurements -----------------------------------------------------------------

def test_build_measurements_two_corner_gate(front_gate, level_state, ext, cam):
    det = detection_from_pose(front_gate, level_state, ext,
                              scores=[1.0, 0.0, 1.0, 0.0])  # TL + BR diagonal
    gate_map = GateMap(gates=[front_gate])
    meas = build_measurements([det], gate_map, level_state, ext, cam, CFG)
    assert len(meas) == 2
    assert {m.corner_label for m in meas} == {CornerLabel.TL, CornerLabel.BR}

    cfg4 = VisionConfig(min_corners_per_gate=4)
    assert build_measurements([det], gate_map, level_state, ext, cam, cfg4) == []


def test_build_measurements_range_gate(level_state, ext, cam):
    far = Gate.from_pose(0, [16.0, 0.0, 1.5], 0, 0, 0, 1.5, 1.5)
    det = detection_from_pose(far, level_state, ext)
    meas = build_measurements([det], GateMap(gates=[far]), level_state, ext,
                              cam, CFG)
    assert meas == []


def test_build_measurements_score_filter(front_gate, level_state, ext, cam):
    det = detection_from_pose(front_gate, level_state, ext,
                              scores=[1.0, 0.25, 1.0, 1.0])
    meas = build_measurements([det], GateMap(gates=[front_gate]), level_state,
                              ext, cam, CFG)
    assert len(meas) == 3  # the 0.25-score corner falls below the 0.3 cutoff
    assert CornerLabel.TR not in {m.corner_label for m in meas}


def test_build_measurements_counts_bounded(front_gate, level_state, ext, cam):
    for _ in range(20):
        scores = np.where(RNG.random(4) < 0.5, 1.0, 0.0)
        if scores.sum() == 0:
            scores[0] = 1.0
        det = detection_from_pose(front_gate, level_state, ext, scores=scores)
        meas = build_measurements([det], GateMap(gates=[front_gate]),
                                  level_state, ext, cam, CFG)
        if meas:
            per_gate = len(meas)
            assert CFG.min_corners_per_gate <= per_gate <= 4
