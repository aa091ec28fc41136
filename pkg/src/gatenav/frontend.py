"""Vision frontend: turns raw per-frame gate detections into associated,
correctly ordered corner measurements using the current state estimate.

Pipeline: gravity-aware corner reordering -> detection-to-map association
(spatial + scale consistency) -> rear-view flip resolution -> score / range /
min-corner filtering.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import (
    DEPTH_EPSILON,
    BehindCamera,
    CameraModel,
    Extrinsics,
    camera_to_world,
    distort_to_pixel,
    project,
    undistort_normalize,
    world_to_camera,
)
from .state import LABELS, CornerLabel, CornerMeasurement, Gate, GateDetection, GateMap, NominalState

INFEASIBLE = 1e12

# target quadrant signs per physical label: (up component, right component)
QUADRANT_SIGNS = {
    CornerLabel.TL: (+1.0, -1.0),
    CornerLabel.TR: (+1.0, +1.0),
    CornerLabel.BR: (-1.0, +1.0),
    CornerLabel.BL: (-1.0, -1.0),
}


class DegenerateProjection(ValueError):
    """Gravity probe fell behind the camera; keep detector corner order."""


# Minimum score gain (as a fraction of total corner spread) before the
# quadrant assignment overrides the incoming detector labels. Partial
# detections project symmetric deltas whose summed score ties within noise;
# without a decisive gain the detector labeling is the better prior.
REORDER_MARGIN = 0.2


@dataclass
class VisionConfig:
    probe_depth_m: float = 3.0
    assoc_max_dist_px: float = 75.0
    assoc_min_area_ratio: float = 0.2
    max_gate_range_m: float = 15.0
    min_corner_score: float = 0.3
    min_corners_per_gate: int = 2

    def __post_init__(self):
        if min(self.probe_depth_m, self.assoc_max_dist_px,
               self.assoc_min_area_ratio, self.max_gate_range_m) <= 0:
            raise ValueError("vision thresholds must be positive")
        if not 0 <= self.min_corner_score <= 1:
            raise ValueError("min_corner_score must be in [0, 1]")
        if self.min_corners_per_gate not in (2, 3, 4):
            raise ValueError("min_corners_per_gate must be 2, 3, or 4")


# ---------------------------------------------------------------------------
# reordering
# ---------------------------------------------------------------------------

def image_up_right(state: NominalState, ext: Extrinsics, centroid_norm,
                   cfg: VisionConfig):
    """Gravity-aligned unit 'up' and 'right' vectors in the image plane.

    The detection centroid is back-projected to probe_depth_m, lifted to the
    world frame, and the projections of the probe point offset by +/- world z
    are differenced. Raises DegenerateProjection when either offset falls
    behind the camera.
    """
    d = cfg.probe_depth_m
    p_ref = camera_to_world(
        np.array([centroid_norm[0] * d, centroid_norm[1] * d, d]),
        state.p, state.q, ext)
    g_z = np.array([0.0, 0.0, 1.0])
    try:
        up_img = project(world_to_camera(p_ref + g_z, state.p, state.q, ext))
        dn_img = project(world_to_camera(p_ref - g_z, state.p, state.q, ext))
    except BehindCamera as exc:
        raise DegenerateProjection(str(exc)) from exc
    delta = up_img - dn_img
    n = math.hypot(delta[0], delta[1])
    if n < 1e-12:
        raise DegenerateProjection("gravity probe projects to a point")
    mu_up = delta / n
    mu_right = np.array([-mu_up[1], mu_up[0]])
    return mu_up, mu_right


def reorder_corners(det: GateDetection, mu_up, mu_right) -> GateDetection:
    """Assign present corners to physical labels.

    Maximizes the summed quadrant score sign_up * (delta . mu_up) +
    sign_right * (delta . mu_right) over all injective label assignments
    (at most 4! = 24), with deltas measured from the centroid of present
    corners in normalized coordinates. The winning assignment replaces the
    incoming labels only when it beats them by REORDER_MARGIN of the total
    corner spread; marginal wins keep the detector order.
    """
    labels = det.present_labels
    if len(labels) < 2:
        return det
    pts = det.corners_norm[[int(l) for l in labels]]
    centroid = pts.mean(axis=0)
    deltas = pts - centroid
    du = deltas @ np.asarray(mu_up, dtype=float)
    dr = deltas @ np.asarray(mu_right, dtype=float)

    def score(perm):
        s = 0.0
        for i, lab in enumerate(perm):
            su, sr = QUADRANT_SIGNS[lab]
            s += su * du[i] + sr * dr[i]
        return s

    best_perm = None
    best_score = -math.inf
    for perm in itertools.permutations(LABELS, len(labels)):
        s = score(perm)
        if s > best_score:
            best_score = s
            best_perm = perm

    incoming = score(tuple(labels))
    spread = float(np.abs(du).sum() + np.abs(dr).sum())
    if best_score - incoming <= REORDER_MARGIN * spread:
        return det
    return det.replace_slots({labels[i]: best_perm[i] for i in range(len(labels))})


# ---------------------------------------------------------------------------
# association
# ---------------------------------------------------------------------------

def _corner_scale(points: np.ndarray) -> float:
    """Area-like size of a corner set in pixel coordinates.

    Shoelace polygon area for >= 3 points (canonical cyclic order), and the
    squared half-diagonal for 2 points so partial detections keep a usable
    scale measure.
    """
    k = len(points)
    if k >= 3:
        x, y = points[:, 0], points[:, 1]
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))
    d = points[0] - points[1]
    return 0.25 * float(d @ d)


def _detection_pixels(det: GateDetection, cam: CameraModel) -> np.ndarray:
    if det.corners_px is not None:
        return det.corners_px
    px = np.full((4, 2), np.nan)
    for lab in det.present_labels:
        px[lab] = distort_to_pixel(det.corners_norm[lab], cam)
    return px


def _gate_candidates(gate_map: GateMap, state: NominalState, ext: Extrinsics,
                     cam: CameraModel, cfg: VisionConfig):
    """Gates in the field of view with all corners projectable, plus their
    projected pixel corners."""
    out = []
    for gate in gate_map:
        c_cam = world_to_camera(gate.centroid_w, state.p, state.q, ext)
        if not (DEPTH_EPSILON < c_cam[2] <= cfg.max_gate_range_m):
            continue
        cpx = distort_to_pixel(project(c_cam), cam)
        if not (0 <= cpx[0] <= cam.width and 0 <= cpx[1] <= cam.height):
            continue
        corners_px = np.empty((4, 2))
        ok = True
        for i in range(4):
            p_c = world_to_camera(gate.corners_w[i], state.p, state.q, ext)
            if p_c[2] <= DEPTH_EPSILON:
                ok = False
                break
            corners_px[i] = distort_to_pixel(project(p_c), cam)
        if ok:
            out.append((gate, corners_px))
    return out


def association_cost(det_px: np.ndarray, labels, gate_px: np.ndarray,
                     cfg: VisionConfig):
    """(cost, distance, area ratio) for one detection-gate pair.

    Centroid distance and size are computed over the detection's present
    labels on both sides so partial detections compare like with like.
    Returns cost = INFEASIBLE when d >= 75 px or rho <= 0.2.
    """
    if len(labels) < 2:
        return INFEASIBLE, math.inf, 0.0   # no usable scale from one corner
    idx = [int(l) for l in labels]
    det_pts = det_px[idx]
    map_pts = gate_px[idx]
    d = float(np.linalg.norm(det_pts.mean(axis=0) - map_pts.mean(axis=0)))
    a_det = _corner_scale(det_pts)
    a_map = _corner_scale(map_pts)
    if a_det <= 0.0 or a_map <= 0.0:
        return INFEASIBLE, d, 0.0
    rho = min(a_det / a_map, a_map / a_det)
    if d >= cfg.assoc_max_dist_px or rho <= cfg.assoc_min_area_ratio:
        return INFEASIBLE, d, rho
    return d / rho, d, rho


def associate(dets, gate_map: GateMap, state: NominalState, ext: Extrinsics,
              cam: CameraModel, cfg: VisionConfig):
    """One-to-one detection-to-gate association.

    Minimum-total-cost assignment of maximum cardinality over all feasible
    (d < 75 px, rho > 0.2) pairs; unmatched detections are dropped.
    """
    candidates = _gate_candidates(gate_map, state, ext, cam, cfg)
    if not dets or not candidates:
        return []
    cost = np.full((len(dets), len(candidates)), INFEASIBLE)
    for i, det in enumerate(dets):
        det_px = _detection_pixels(det, cam)
        labels = det.present_labels
        for j, (_, gate_px) in enumerate(candidates):
            cost[i, j], _, _ = association_cost(det_px, labels, gate_px, cfg)
    rows, cols = linear_sum_assignment(cost)
    pairs = []
    for i, j in zip(rows, cols):
        if cost[i, j] < INFEASIBLE:
            pairs.append((dets[i], candidates[j][0]))
    return pairs


# ---------------------------------------------------------------------------
# flip resolution
# ---------------------------------------------------------------------------

_FLIP = {CornerLabel.TL: CornerLabel.TR, CornerLabel.TR: CornerLabel.TL,
         CornerLabel.BL: CornerLabel.BR, CornerLabel.BR: CornerLabel.BL}


def _labeling_error(det: GateDetection, gate: Gate, state, ext, mapping):
    """(invalid projection count, summed squared reprojection error)."""
    invalid = 0
    err = 0.0
    for lab in det.present_labels:
        p_c = world_to_camera(gate.corners_w[mapping[lab]], state.p, state.q, ext)
        if p_c[2] <= DEPTH_EPSILON:
            invalid += 1
            continue
        r = det.corners_norm[lab] - project(p_c)
        err += float(r @ r)
    return invalid, err


def resolve_flip(det: GateDetection, gate: Gate, state: NominalState,
                 ext: Extrinsics, cam: CameraModel) -> GateDetection:
    """Pick the lower-reprojection-error labeling between the incoming labels
    and the left-right swapped labels (rear-view ambiguity). Ties keep the
    incoming labeling."""
    ident = {lab: lab for lab in LABELS}
    inv_a, err_a = _labeling_error(det, gate, state, ext, ident)
    inv_b, err_b = _labeling_error(det, gate, state, ext, _FLIP)
    if (inv_b, err_b) < (inv_a, err_a):
        return det.replace_slots({lab: _FLIP[lab] for lab in det.present_labels})
    return det


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------

def _with_normalized(det: GateDetection, cam: CameraModel) -> GateDetection:
    if det.corners_norm is not None:
        return det
    nm = np.full((4, 2), np.nan)
    for lab in det.present_labels:
        nm[lab] = undistort_normalize(det.corners_px[lab], cam)
    det.corners_norm = nm
    return det


def build_measurements(dets, gate_map: GateMap, state: NominalState,
                       ext: Extrinsics, cam: CameraModel, cfg: VisionConfig):
    """Reorder, associate, flip-resolve, and filter detections into
    CornerMeasurement lists ready for the filter or smoother."""
    prepared = []
    for det in dets:
        det = _with_normalized(det, cam)
        pts = det.corners_norm[[int(l) for l in det.present_labels]]
        try:
            mu_up, mu_right = image_up_right(state, ext, pts.mean(axis=0), cfg)
            det = reorder_corners(det, mu_up, mu_right)
        except DegenerateProjection:
            pass  # keep detector order
        prepared.append(det)

    measurements = []
    for det, gate in associate(prepared, gate_map, state, ext, cam, cfg):
        det = resolve_flip(det, gate, state, ext, cam)
        rng = float(np.linalg.norm(
            world_to_camera(gate.centroid_w, state.p, state.q, ext)))
        if rng > cfg.max_gate_range_m:
            continue
        keep = [lab for lab in det.present_labels
                if det.scores[lab] >= cfg.min_corner_score]
        if len(keep) < cfg.min_corners_per_gate:
            continue
        for lab in keep:
            measurements.append(CornerMeasurement(
                u_norm=det.corners_norm[lab].copy(),
                p_gw=gate.corners_w[lab].copy(),
                gate_id=gate.id,
                corner_label=lab,
                t=det.t,
            ))
    return measurements
