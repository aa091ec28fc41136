"""Trajectory and image-space evaluation plus the robustness and
minimum-corner ablation harnesses.

Both trajectories are expected in the shared gate-map world frame, so no
spatial alignment is applied by default; rotation error is the geodesic
angle of the relative quaternion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .eskf import EskfConfig
from .frontend import VisionConfig
from .geometry import (
    BehindCamera,
    CameraModel,
    Extrinsics,
    distort_to_pixel,
    project,
    quat_conjugate,
    quat_multiply,
    so3_log,
    world_to_camera,
)
from .pipeline import Scenario, run_scenario_filter, truth_trajectory
from .state import GateMap, Trajectory

MAX_INTERP_GAP_S = 0.05
DIVERGENCE_E_T = 5.0


class NoOverlap(ValueError):
    """Estimate and reference share less than the required time span."""


@dataclass
class TrajectoryError:
    e_t: float                 # RMS translation [m]
    e_r: float                 # RMS rotation [deg]
    e_v: float                 # RMS velocity [m/s]
    t: np.ndarray = field(repr=False)
    translation: np.ndarray = field(repr=False)
    rotation_deg: np.ndarray = field(repr=False)
    velocity: np.ndarray = field(repr=False)


@dataclass
class ReprojectionStats:
    mean_px: float
    median_px: float
    p95_px: float
    count: int
    errors_px: np.ndarray = field(repr=False)


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x)))) if len(x) else 0.0


def trajectory_error(estimate: Trajectory, reference: Trajectory,
                     min_overlap_s: float = 1.0) -> TrajectoryError:
    """Per-sample errors of the estimate against the interpolated reference.

    Reference samples are linearly interpolated (slerp for attitude) at the
    estimate timestamps; estimate samples outside the reference span or
    inside reference gaps larger than MAX_INTERP_GAP_S are excluded.
    """
    lo = max(estimate.t[0], reference.t[0])
    hi = min(estimate.t[-1], reference.t[-1])
    if hi - lo < min_overlap_s:
        raise NoOverlap(f"overlap {hi - lo:.3f}s < {min_overlap_s}s")

    ts, et, er, ev = [], [], [], []
    for i, t in enumerate(estimate.t):
        if t < lo or t > hi or reference.gap_at(t) > MAX_INTERP_GAP_S:
            continue
        p_r, v_r, q_r = reference.interpolate(t)
        ts.append(t)
        et.append(float(np.linalg.norm(estimate.p[i] - p_r)))
        ev.append(float(np.linalg.norm(estimate.v[i] - v_r)))
        ang = np.linalg.norm(so3_log(quat_multiply(quat_conjugate(q_r),
                                                   estimate.q[i])))
        er.append(math.degrees(ang))
    ts = np.array(ts)
    et = np.array(et)
    er = np.array(er)
    ev = np.array(ev)
    return TrajectoryError(e_t=_rms(et), e_r=_rms(er), e_v=_rms(ev),
                           t=ts, translation=et, rotation_deg=er, velocity=ev)


def reprojection_error(states: Trajectory, detections, gate_map: GateMap,
                       cam: CameraModel, ext: Extrinsics) -> ReprojectionStats:
    """Pixel distance between detected corners and the state-projected map
    corners (distorted back to pixel space). Detections must carry gate ids."""
    errs = []
    for det in detections:
        if det.gate_id is None:
            continue
        interp = states.interpolate(det.t)
        if interp is None or states.gap_at(det.t) > MAX_INTERP_GAP_S:
            continue
        p, _, q = interp
        gate = gate_map.by_id(det.gate_id)
        for lab in det.present_labels:
            try:
                proj = distort_to_pixel(
                    project(world_to_camera(gate.corners_w[lab], p, q, ext)), cam)
            except BehindCamera:
                continue
            errs.append(float(np.linalg.norm(det.corners_px[lab] - proj)))
    errs = np.array(errs)
    if len(errs) == 0:
        return ReprojectionStats(0.0, 0.0, 0.0, 0, errs)
    return ReprojectionStats(mean_px=float(errs.mean()),
                             median_px=float(np.median(errs)),
                             p95_px=float(np.percentile(errs, 95)),
                             count=len(errs), errors_px=errs)


# ---------------------------------------------------------------------------
# ablation harnesses
# ---------------------------------------------------------------------------

ABLATION_VARIANTS = ("huber", "chi2", "naive")


def robustness_ablation(scenario: Scenario,
                        variants=ABLATION_VARIANTS) -> dict:
    """Run the filter with Huber reweighting, a chi-square gate, and naive
    (w = 1) fusion on the same scenario; report e_t and a divergence flag."""
    ref = truth_trajectory(scenario.truth)
    out = {}
    for variant in variants:
        cfg = replace(scenario.eskf_cfg, robust_mode=variant)
        run = run_scenario_filter(scenario, eskf_cfg=cfg)
        err = trajectory_error(run.trajectory, ref)
        out[variant] = {
            "e_t": err.e_t,
            "e_r": err.e_r,
            "diverged": bool(err.e_t > DIVERGENCE_E_T
                             or err.translation.max(initial=0.0) > DIVERGENCE_E_T),
        }
    return out


def min_corner_sweep(scenario: Scenario, values=(2, 4, 6)) -> dict:
    """Translation error as a function of the minimum-corner requirement.

    Values up to 4 set the per-gate minimum; larger values are interpreted
    as a frame-level total across concurrently visible gates (with the
    per-gate minimum at 2), since one gate exposes at most 4 inner corners.
    """
    ref = truth_trajectory(scenario.truth)
    out = {}
    for value in values:
        if value <= 4:
            vcfg = replace(scenario.vision_cfg, min_corners_per_gate=value)
            ecfg = replace(scenario.eskf_cfg, min_corners_per_gate=value)
            run = run_scenario_filter(scenario, eskf_cfg=ecfg, vision_cfg=vcfg)
        else:
            vcfg = replace(scenario.vision_cfg, min_corners_per_gate=2)
            ecfg = replace(scenario.eskf_cfg, min_corners_per_gate=2)
            run = run_scenario_filter(scenario, eskf_cfg=ecfg, vision_cfg=vcfg,
                                      min_corner_total=value)
        err = trajectory_error(run.trajectory, ref)
        out[value] = {"e_t": err.e_t, "e_r": err.e_r,
                      "updates": sum(r.applied for r in run.reports)}
    return out
