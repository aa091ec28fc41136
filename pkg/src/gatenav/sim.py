"""Synthetic ground truth, IMU streams, and corrupted gate-corner detections.

Analytic trajectory generators (closed-form position with analytic first and
second derivatives) feed an inverse sensor model. The stored per-sample
acceleration and body rate are the forward differences of the analytic
velocity and attitude, so a zero-noise IMU stream reproduces the sampled
truth exactly under the estimator's Euler propagation model; the analytic
position and velocity stay untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (
    DEPTH_EPSILON,
    CameraModel,
    Extrinsics,
    NoConvergence,
    camera_to_world,
    distort_to_pixel,
    project,
    quat_conjugate,
    quat_identity,
    quat_multiply,
    rotation_matrix,
    so3_exp,
    so3_log,
    undistort_normalize,
    world_to_camera,
)
from .state import Gate, GateDetection, GateMap, ImuSample, NoiseParams

TRAJECTORY_KINDS = ("ellipse", "lemniscate", "racetrack3d", "static")
MAX_ROLL = math.radians(60.0)
SIM_DETECTION_RANGE_M = 25.0   # generous; the frontend enforces its own gate


class InvalidSpec(ValueError):
    """Trajectory specification failed validation."""


@dataclass
class TrajectorySpec:
    kind: str
    duration: float = 10.0
    period: float = 8.0
    semi_axis_a: float = 5.0
    semi_axis_b: float = 3.0
    center: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.5]))
    vert_amp: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.kind not in TRAJECTORY_KINDS:
            raise InvalidSpec(f"unknown trajectory kind {self.kind!r}")
        if self.period <= 0 or self.duration <= 0:
            raise InvalidSpec("period and duration must be > 0")


@dataclass
class CorruptionSpec:
    pixel_noise_sigma: float = 1.0
    dropout_prob: float = 0.0
    label_swap_prob: float = 0.0
    outlier_prob: float = 0.0
    outlier_sigma: float = 60.0
    detection_rate_hz: float = 85.0
    imu_rate_hz: float = 500.0
    bias_true: tuple = (
        (0.05, -0.03, 0.02),
        (0.002, -0.001, 0.0015),
    )
    score_corruption: bool = False
    corrupted_score: float = 0.2
    # detector recall drops off for oblique gates; near-edge-on views are
    # not emitted at all
    max_view_angle_deg: float = 65.0

    def __post_init__(self):
        for name in ("dropout_prob", "label_swap_prob", "outlier_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.detection_rate_hz <= 0 or self.imu_rate_hz <= 0:
            raise ValueError("rates must be > 0")


@dataclass
class GroundTruthSample:
    t: float
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    q: np.ndarray
    w: np.ndarray   # body angular rate


# ---------------------------------------------------------------------------
# analytic trajectories
# ---------------------------------------------------------------------------

def _position_vel_acc(spec: TrajectorySpec, t: np.ndarray):
    """Closed-form p(t), v(t), a(t) arrays for the requested shape."""
    c = spec.center
    om = 2.0 * math.pi / spec.period
    th = om * t
    a_, b_ = spec.semi_axis_a, spec.semi_axis_b
    zeros = np.zeros_like(t)
    if spec.kind == "static":
        p = np.tile(c, (len(t), 1))
        return p, np.zeros((len(t), 3)), np.zeros((len(t), 3))
    if spec.kind == "ellipse":
        p = np.stack([a_ * np.cos(th), b_ * np.sin(th), zeros], axis=1) + c
        v = np.stack([-a_ * om * np.sin(th), b_ * om * np.cos(th), zeros], axis=1)
        acc = np.stack([-a_ * om * om * np.cos(th),
                        -b_ * om * om * np.sin(th), zeros], axis=1)
        return p, v, acc
    if spec.kind == "lemniscate":
        # Gerono figure-eight: x = a sin(th), y = b sin(th) cos(th)
        p = np.stack([a_ * np.sin(th), 0.5 * b_ * np.sin(2 * th), zeros], axis=1) + c
        v = np.stack([a_ * om * np.cos(th), b_ * om * np.cos(2 * th), zeros], axis=1)
        acc = np.stack([-a_ * om * om * np.sin(th),
                        -2 * b_ * om * om * np.sin(2 * th), zeros], axis=1)
        return p, v, acc
    # racetrack3d: figure-eight footprint with steep climb/dive reversals
    amp = spec.vert_amp if spec.vert_amp else 1.2
    p = np.stack([a_ * np.sin(th), 0.5 * b_ * np.sin(2 * th),
                  amp * np.sin(2 * th + 0.5)], axis=1) + c
    v = np.stack([a_ * om * np.cos(th), b_ * om * np.cos(2 * th),
                  2 * amp * om * np.cos(2 * th + 0.5)], axis=1)
    acc = np.stack([-a_ * om * om * np.sin(th),
                    -2 * b_ * om * om * np.sin(2 * th),
                    -4 * amp * om * om * np.sin(2 * th + 0.5)], axis=1)
    return p, v, acc


def _attitude_from_motion(v: np.ndarray, acc: np.ndarray) -> np.ndarray:
    """Racing-style attitude: yaw follows heading, roll banks with lateral
    acceleration (clipped at 60 deg), pitch follows the flight-path angle."""
    n = len(v)
    q = np.empty((n, 4))
    yaw_prev = 0.0
    for i in range(n):
        vh = math.hypot(v[i, 0], v[i, 1])
        if vh > 0.1:
            yaw = math.atan2(v[i, 1], v[i, 0])
            yaw_prev = yaw
        else:
            yaw = yaw_prev
        pitch = -math.atan2(v[i, 2], max(vh, 0.1))
        heading = np.array([math.cos(yaw), math.sin(yaw), 0.0])
        left = np.array([-heading[1], heading[0], 0.0])
        a_left = float(acc[i] @ left)
        roll = max(-MAX_ROLL, min(MAX_ROLL, math.atan2(-a_left, 9.81)))
        qz = so3_exp([0.0, 0.0, yaw])
        qy = so3_exp([0.0, pitch, 0.0])
        qx = so3_exp([roll, 0.0, 0.0])
        q[i] = quat_multiply(quat_multiply(qz, qy), qx)
    return q


def generate_trajectory(spec: TrajectorySpec, imu_rate_hz: float = 500.0):
    """Ground-truth samples at the IMU rate."""
    if imu_rate_hz <= 0:
        raise InvalidSpec("imu_rate_hz must be > 0")
    dt = 1.0 / imu_rate_hz
    n = int(round(spec.duration * imu_rate_hz)) + 1
    t = np.arange(n) * dt
    p, v, acc = _position_vel_acc(spec, t)
    if spec.kind == "static":
        q = np.tile(quat_identity(), (n, 1))
    else:
        q = _attitude_from_motion(v, acc)

    # forward differences; zero-noise IMU then propagates the sampled truth
    # exactly under the Euler model
    a_fd = np.empty((n, 3))
    w_fd = np.empty((n, 3))
    a_fd[:-1] = (v[1:] - v[:-1]) / dt
    for i in range(n - 1):
        w_fd[i] = so3_log(quat_multiply(quat_conjugate(q[i]), q[i + 1])) / dt
    a_fd[-1] = a_fd[-2] if n > 1 else 0.0
    w_fd[-1] = w_fd[-2] if n > 1 else 0.0

    return [GroundTruthSample(t=float(t[i]), p=p[i], v=v[i], a=a_fd[i],
                              q=q[i], w=w_fd[i]) for i in range(n)]


# ---------------------------------------------------------------------------
# sensor synthesis
# ---------------------------------------------------------------------------

def synthesize_imu(truth, corruption: CorruptionSpec, noise: NoiseParams,
                   seed: int, noise_free: bool = False):
    """IMU samples from the inverse measurement model plus seeded noise.

    The sample at t_i covers (t_{i-1}, t_i]; its specific force and rate are
    the truth increments over that interval expressed in the starting body
    frame, so a noise-free stream is exactly consistent with the filter's
    propagation model. noise_free=True skips the noise and bias-walk draws
    while keeping the constant true bias.
    """
    rng = np.random.default_rng(seed)
    g = noise.gravity
    b_a = np.asarray(corruption.bias_true[0], dtype=float).copy()
    b_w = np.asarray(corruption.bias_true[1], dtype=float).copy()
    samples = []
    for i in range(len(truth) - 1):
        s = truth[i]
        dt = truth[i + 1].t - s.t
        sq_dt = math.sqrt(dt)
        a_m = rotation_matrix(s.q).T @ (s.a - g) + b_a
        w_m = s.w + b_w
        if not noise_free:
            a_m = a_m + rng.normal(0.0, noise.sigma_a / sq_dt, 3)
            w_m = w_m + rng.normal(0.0, noise.sigma_w / sq_dt, 3)
            b_a = b_a + rng.normal(0.0, noise.sigma_ba * sq_dt, 3)
            b_w = b_w + rng.normal(0.0, noise.sigma_bw * sq_dt, 3)
        samples.append(ImuSample(t=truth[i + 1].t, a_m=a_m, w_m=w_m))
    return samples


def _ring_orientation(px: np.ndarray) -> float:
    """Shoelace sign of the projected TL-TR-BR-BL ring; negative from the rear."""
    x, y = px[:, 0], px[:, 1]
    return float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def synthesize_detections(truth, gate_map: GateMap, cam: CameraModel,
                          ext: Extrinsics, corruption: CorruptionSpec,
                          seed: int):
    """Corrupted per-gate corner detections at the detection rate.

    Detection timestamps are the truth samples subsampled at the nearest
    integer stride of the IMU rate. Labels follow the map except for rear
    views, which are emitted with the left-right mirrored apparent ordering
    a front-trained detector would produce.
    """
    rng = np.random.default_rng(seed)
    if len(truth) < 2:
        return []
    dt = truth[1].t - truth[0].t
    stride = max(1, int(round(1.0 / (corruption.detection_rate_hz * dt))))
    cos_max_view = math.cos(math.radians(corruption.max_view_angle_deg))
    detections = []
    for idx in range(0, len(truth), stride):
        s = truth[idx]
        for gate in gate_map:
            c_cam = world_to_camera(gate.centroid_w, s.p, s.q, ext)
            if c_cam[2] <= DEPTH_EPSILON:
                continue
            if np.linalg.norm(c_cam) > SIM_DETECTION_RANGE_M:
                continue
            normal = np.cross(gate.corners_w[1] - gate.corners_w[0],
                              gate.corners_w[3] - gate.corners_w[0])
            normal /= np.linalg.norm(normal)
            cam_pos = camera_to_world(np.zeros(3), s.p, s.q, ext)
            sight = cam_pos - gate.centroid_w
            sight /= np.linalg.norm(sight)
            if abs(float(normal @ sight)) < cos_max_view:
                continue
            cams = [world_to_camera(gate.corners_w[i], s.p, s.q, ext)
                    for i in range(4)]
            if any(pc[2] <= DEPTH_EPSILON for pc in cams):
                continue
            px = np.array([distort_to_pixel(project(pc), cam) for pc in cams])
            visible = [(0 <= px[i, 0] <= cam.width and 0 <= px[i, 1] <= cam.height)
                       for i in range(4)]
            if sum(visible) == 0:
                continue

            # rear view: detector labels mirror left-right
            labels = [0, 1, 2, 3]
            if _ring_orientation(px) < 0:
                labels = [1, 0, 3, 2]

            corners_px = np.full((4, 2), np.nan)
            scores = np.zeros(4)
            for i in range(4):
                lab = labels[i]
                if not visible[i]:
                    continue
                if corruption.dropout_prob > 0 and rng.random() < corruption.dropout_prob:
                    continue
                pt = px[i].copy()
                score = 1.0
                if corruption.pixel_noise_sigma > 0:
                    pt = pt + rng.normal(0.0, corruption.pixel_noise_sigma, 2)
                if corruption.outlier_prob > 0 and rng.random() < corruption.outlier_prob:
                    pt = pt + rng.normal(0.0, corruption.outlier_sigma, 2)
                    if corruption.score_corruption:
                        score = corruption.corrupted_score
                corners_px[lab] = pt
                scores[lab] = score

            present = np.where(scores > 0)[0]
            if len(present) == 0:
                continue
            if corruption.label_swap_prob > 0 and rng.random() < corruption.label_swap_prob:
                perm = rng.permutation(present)
                corners_px[present], scores[present] = (
                    corners_px[perm].copy(), scores[perm].copy())

            corners_norm = np.full((4, 2), np.nan)
            for lab in np.where(scores > 0)[0]:
                try:
                    corners_norm[lab] = undistort_normalize(corners_px[lab], cam)
                except NoConvergence:
                    corners_px[lab] = np.nan
                    scores[lab] = 0.0
            if not (scores > 0).any():
                continue
            detections.append(GateDetection(
                t=s.t, scores=scores, corners_px=corners_px,
                corners_norm=corners_norm))
    return detections


# ---------------------------------------------------------------------------
# track construction helpers
# ---------------------------------------------------------------------------

def gates_along_trajectory(spec: TrajectorySpec, n_gates: int,
                           width: float = 1.5, height: float = 1.5,
                           imu_rate_hz: float = 100.0) -> GateMap:
    """Vertical gates centered on the path, facing along the local heading."""
    samples = generate_trajectory(spec, imu_rate_hz=imu_rate_hz)
    period = min(spec.period, spec.duration)
    times = [period * i / n_gates for i in range(n_gates)]
    dt = samples[1].t - samples[0].t if len(samples) > 1 else 1.0
    gates = []
    for gid, tg in enumerate(times):
        s = samples[min(int(round(tg / dt)), len(samples) - 1)]
        yaw = math.atan2(s.v[1], s.v[0]) if np.linalg.norm(s.v[:2]) > 1e-6 else 0.0
        gates.append(Gate.from_pose(gid, s.p, yaw, 0.0, 0.0, width, height))
    return GateMap(gates=gates)
