"""Error-state Kalman filter: IMU propagation at sensor rate and sequential
tightly-coupled gate-corner updates with Huber reweighting.

The nominal state is integrated nonlinearly; a 15-dim error state
[dp, dv, dtheta, db_a, db_w] carries the covariance. Corrections are injected
into the nominal state and the error mean is reset to zero, so only the
covariance P is stored between steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (
    DEPTH_EPSILON,
    BehindCamera,
    Extrinsics,
    quat_multiply,
    quat_normalize,
    rotation_matrix,
    skew,
    so3_exp,
)
from .state import (
    BA_SLC,
    BW_SLC,
    ERROR_DIM,
    P_SLC,
    TH_SLC,
    V_SLC,
    CornerMeasurement,
    ImuSample,
    NoiseParams,
    NominalState,
    NonMonotonicTimestamp,
    compose_state,
    symmetrize,
)

MAX_IMU_DT = 0.1          # beyond this the first-order transition is untrusted
CHI2_GATE_2DOF = 5.99     # 95% quantile of chi-square with 2 DOF
ROBUST_MODES = ("huber", "chi2", "naive")


class ExcessiveDt(ValueError):
    """IMU gap exceeded MAX_IMU_DT; the caller decides whether to reset."""


def _default_initial_cov():
    return np.concatenate([
        np.full(3, 0.25),    # position [m^2]
        np.full(3, 0.04),    # velocity [(m/s)^2]
        np.full(3, 0.04),    # attitude [rad^2]
        np.full(3, 1e-2),    # accel bias
        np.full(3, 1e-4),    # gyro bias
    ])


@dataclass
class EskfConfig:
    noise: NoiseParams = field(default_factory=NoiseParams)
    r_pixel_sigma: float = 0.005       # measurement std in normalized units
    huber_tau: float = 3.0             # Mahalanobis units, 2-DOF residual
    min_corners_per_gate: int = 2
    initial_cov_diag: np.ndarray = field(default_factory=_default_initial_cov)
    robust_mode: str = "huber"
    max_frame_age_s: float = 0.05      # older frames are dropped
    scale_r_by_score: bool = False     # off: scores are not used in the filter

    def __post_init__(self):
        self.initial_cov_diag = np.asarray(self.initial_cov_diag, dtype=float)
        if self.huber_tau <= 0 or self.r_pixel_sigma <= 0:
            raise ValueError("huber_tau and r_pixel_sigma must be > 0")
        if self.robust_mode not in ROBUST_MODES:
            raise ValueError(f"robust_mode must be one of {ROBUST_MODES}")


@dataclass
class MeasurementReport:
    gate_id: int
    label: int
    e: float = 0.0
    w: float = 1.0
    skipped: Optional[str] = None


@dataclass
class UpdateReport:
    t: float
    applied: int = 0
    dropped_frame: Optional[str] = None
    entries: list = field(default_factory=list)


def build_transition(R: np.ndarray, a_body, w_body, dt: float) -> np.ndarray:
    """Discrete error-state transition F = I + Fc*dt.

    The dv/dtheta coupling is -R [a_body]x, the local (body-frame) attitude
    error consistent with the right-multiplicative quaternion injection.
    """
    F = np.eye(ERROR_DIM)
    F[0, 3] = F[1, 4] = F[2, 5] = dt
    F[V_SLC, TH_SLC] = (-dt) * (R @ skew(a_body))
    F[V_SLC, BA_SLC] = (-dt) * R
    F[TH_SLC, TH_SLC] -= dt * skew(w_body)
    F[6, 12] = F[7, 13] = F[8, 14] = -dt
    return F


def build_process_noise(noise: NoiseParams, dt: float) -> np.ndarray:
    """Block-diagonal discrete process noise with the position-velocity
    coupling block."""
    Q = np.zeros((ERROR_DIM, ERROR_DIM))
    sa2, sw2 = noise.sigma_a ** 2, noise.sigma_w ** 2
    qp = sa2 * dt ** 3 / 3.0
    qpv = sa2 * dt ** 2 / 2.0
    qv = sa2 * dt
    qth = sw2 * dt
    qba = noise.sigma_ba ** 2 * dt
    qbw = noise.sigma_bw ** 2 * dt
    for i in range(3):
        Q[i, i] = qp
        Q[i, i + 3] = Q[i + 3, i] = qpv
        Q[i + 3, i + 3] = qv
        Q[i + 6, i + 6] = qth
        Q[i + 9, i + 9] = qba
        Q[i + 12, i + 12] = qbw
    return Q


def huber_weight(r, S, tau: float) -> float:
    """w = min(1, tau/e) with e the Mahalanobis norm of r under S."""
    S = np.asarray(S, dtype=float)
    det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
    e2 = (r[0] * (S[1, 1] * r[0] - S[0, 1] * r[1])
          + r[1] * (S[0, 0] * r[1] - S[1, 0] * r[0])) / det
    e = math.sqrt(max(e2, 0.0))
    if e <= tau:
        return 1.0
    return tau / e


class EskfEstimator:
    """Single-writer filter instance: propagate/update must be called in
    timestamp order. Snapshot reads go through .nominal / .P copies."""

    def __init__(self, nominal: NominalState, P: np.ndarray, cfg: EskfConfig):
        self.nominal = nominal
        self.P = np.asarray(P, dtype=float)
        self.cfg = cfg
        self.last_imu_t = nominal.t

    @classmethod
    def initialize(cls, p0, q0, cfg: EskfConfig, t0: float = 0.0) -> "EskfEstimator":
        nominal = NominalState.at_pose(p0, q0, t=t0)
        return cls(nominal, np.diag(cfg.initial_cov_diag), cfg)

    # -- propagation --------------------------------------------------------

    def propagate(self, imu: ImuSample) -> None:
        dt = imu.t - self.last_imu_t
        if dt <= 0:
            raise NonMonotonicTimestamp(
                f"imu t {imu.t} <= last t {self.last_imu_t}")
        if dt > MAX_IMU_DT:
            raise ExcessiveDt(f"imu dt {dt:.4f}s > {MAX_IMU_DT}s")

        x = self.nominal
        noise = self.cfg.noise
        R = rotation_matrix(x.q)
        a_body = imu.a_m - x.b_a
        w_body = imu.w_m - x.b_w
        a_w = R @ a_body + noise.gravity

        x.p = x.p + x.v * dt + (0.5 * dt * dt) * a_w
        x.v = x.v + a_w * dt
        x.q = quat_normalize(quat_multiply(x.q, so3_exp(w_body * dt)))
        x.t = imu.t
        self.last_imu_t = imu.t

        F = build_transition(R, a_body, w_body, dt)
        Q = build_process_noise(noise, dt)
        self.P = symmetrize(F @ self.P @ F.T + Q)

    # -- measurement model --------------------------------------------------

    def measurement_residual(self, z: CornerMeasurement, ext: Extrinsics):
        """Residual r = u_norm - h(x) and 2x15 Jacobian H of h wrt the error
        state. Raises BehindCamera for invalid depth."""
        x = self.nominal
        R_wb = rotation_matrix(x.q)
        d_body = R_wb.T @ (z.p_gw - x.p)
        p_c = ext.R_bc.T @ (d_body - ext.p_bc)
        zc = p_c[2]
        if zc <= DEPTH_EPSILON:
            raise BehindCamera(f"corner depth {zc:.3e}")
        izc = 1.0 / zc
        r = z.u_norm - np.array([p_c[0] * izc, p_c[1] * izc])

        J_pi = np.array([
            [izc, 0.0, -p_c[0] * izc * izc],
            [0.0, izc, -p_c[1] * izc * izc],
        ])
        H = np.zeros((2, ERROR_DIM))
        H[:, P_SLC] = J_pi @ (-(ext.R_bc.T @ R_wb.T))
        H[:, TH_SLC] = J_pi @ (ext.R_bc.T @ skew(d_body))
        return r, H

    # -- update -------------------------------------------------------------

    def update(self, measurements, ext: Extrinsics) -> UpdateReport:
        """Sequential Kalman update over a single frame's measurements.

        Each measurement is relinearized against the just-updated nominal
        state; the error mean is reset to zero after every injection.
        """
        if not measurements:
            return UpdateReport(t=self.nominal.t)
        t_z = measurements[0].t
        report = UpdateReport(t=t_z)
        if t_z > self.nominal.t + 1e-9:
            report.dropped_frame = "future_frame"
            return report
        if self.nominal.t - t_z > self.cfg.max_frame_age_s:
            report.dropped_frame = "stale_frame"
            return report

        counts = {}
        for z in measurements:
            counts[z.gate_id] = counts.get(z.gate_id, 0) + 1

        r_var = self.cfg.r_pixel_sigma ** 2
        tau = self.cfg.huber_tau
        mode = self.cfg.robust_mode
        I15 = np.eye(ERROR_DIM)

        for z in measurements:
            entry = MeasurementReport(gate_id=z.gate_id, label=int(z.corner_label))
            report.entries.append(entry)
            if counts[z.gate_id] < self.cfg.min_corners_per_gate:
                entry.skipped = "min_corners"
                continue
            try:
                r, H = self.measurement_residual(z, ext)
            except BehindCamera:
                entry.skipped = "behind_camera"
                continue

            r_cov = r_var
            if self.cfg.scale_r_by_score:
                r_cov = r_var  # scores deliberately unused (flag reserved)

            PHt = self.P @ H.T
            S = H @ PHt
            S[0, 0] += r_cov
            S[1, 1] += r_cov
            det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
            e2 = (r[0] * (S[1, 1] * r[0] - S[0, 1] * r[1])
                  + r[1] * (S[0, 0] * r[1] - S[1, 0] * r[0])) / det
            e = math.sqrt(max(e2, 0.0))
            entry.e = e

            w = 1.0
            if mode == "huber":
                if e > tau:
                    w = tau / e
            elif mode == "chi2":
                if e2 > CHI2_GATE_2DOF:
                    entry.skipped = "chi2_reject"
                    continue
            entry.w = w

            # effective covariance R_eff = R_cov / w inflates outliers
            Se = S.copy()
            extra = r_cov / w - r_cov
            Se[0, 0] += extra
            Se[1, 1] += extra
            dete = Se[0, 0] * Se[1, 1] - Se[0, 1] * Se[1, 0]
            Se_inv = np.array([[Se[1, 1], -Se[0, 1]], [-Se[1, 0], Se[0, 0]]]) / dete
            K = PHt @ Se_inv
            self.nominal = compose_state(self.nominal, K @ r)
            self.P = symmetrize((I15 - K @ H) @ self.P)
            report.applied += 1
        return report
