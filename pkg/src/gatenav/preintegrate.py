"""IMU preintegration between keyframes.

Relative increments (dp, dv, dq) are accumulated by forward Euler so that the
full-rate nominal propagation between two keyframes telescopes exactly into

    p_k1 = p_k + v_k*T + 0.5*g*T^2 + R_k @ dp
    v_k1 = v_k + g*T + R_k @ dv
    q_k1 = q_k  *  dq

which keeps the increments independent of the absolute start state. The 9x9
covariance of [d_dp, d_dv, d_dtheta] is propagated with first-order Jacobians.

Timestamp convention: the sample at t_i covers the interval (t_{i-1}, t_i],
with the first interval opening at t_start (default: the first sample's own
timestamp, which then contributes zero time).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import quat_identity, quat_multiply, quat_normalize, rotation_matrix, skew, so3_exp
from .state import ImuSample, NoiseParams, NonMonotonicTimestamp, symmetrize


class EmptyStream(ValueError):
    """Preintegration needs at least one IMU sample."""


@dataclass
class PreintegratedImu:
    dp: np.ndarray
    dv: np.ndarray
    dq: np.ndarray
    dt_total: float
    cov9: np.ndarray
    bias_lin: tuple            # (b_a, b_w) linearization point
    samples: list              # retained for re-preintegration
    t_start: float
    t_end: float


def preintegrate(samples, bias, noise: NoiseParams,
                 t_start: Optional[float] = None,
                 t_end: Optional[float] = None) -> PreintegratedImu:
    if not samples:
        raise EmptyStream("no IMU samples to preintegrate")
    for a, b in zip(samples, samples[1:]):
        if b.t <= a.t:
            raise NonMonotonicTimestamp(f"imu t {b.t} <= {a.t}")
    b_a = np.asarray(bias[0], dtype=float)
    b_w = np.asarray(bias[1], dtype=float)
    t0 = samples[0].t if t_start is None else t_start
    t1 = samples[-1].t if t_end is None else t_end

    dp = np.zeros(3)
    dv = np.zeros(3)
    dq = quat_identity()
    cov = np.zeros((9, 9))
    sa2 = noise.sigma_a ** 2
    sw2 = noise.sigma_w ** 2
    dt_total = 0.0

    prev = t0
    for s in samples:
        dt = min(s.t, t1) - max(prev, t0)
        prev = s.t
        if dt <= 0.0:
            continue
        a = s.a_m - b_a
        w = s.w_m - b_w
        Rd = rotation_matrix(dq)
        Ra = Rd @ skew(a)

        A = np.eye(9)
        A[0, 3] = A[1, 4] = A[2, 5] = dt
        A[0:3, 6:9] = (-0.5 * dt * dt) * Ra
        A[3:6, 6:9] = (-dt) * Ra
        A[6:9, 6:9] = rotation_matrix(so3_exp(w * dt)).T
        cov = A @ cov @ A.T
        # white-noise increments (density -> per-sample variance sigma^2/dt)
        cov[0:3, 0:3] += (0.25 * sa2 * dt ** 3) * np.eye(3)
        cov[0:3, 3:6] += (0.5 * sa2 * dt ** 2) * np.eye(3)
        cov[3:6, 0:3] += (0.5 * sa2 * dt ** 2) * np.eye(3)
        cov[3:6, 3:6] += (sa2 * dt) * np.eye(3)
        cov[6:9, 6:9] += (sw2 * dt) * np.eye(3)

        dp = dp + dv * dt + (0.5 * dt * dt) * (Rd @ a)
        dv = dv + (Rd @ a) * dt
        dq = quat_normalize(quat_multiply(dq, so3_exp(w * dt)))
        dt_total += dt

    return PreintegratedImu(dp=dp, dv=dv, dq=dq, dt_total=dt_total,
                            cov9=symmetrize(cov), bias_lin=(b_a.copy(), b_w.copy()),
                            samples=list(samples), t_start=t0, t_end=t1)
