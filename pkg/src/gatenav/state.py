"""Core state, sensor, and map types shared by the estimator, smoother,
simulator, and I/O layers.

The error state is a 15-vector ordered [dp, dv, dtheta, db_a, db_w]; the
attitude block is a local (body-frame) rotation vector injected by right
quaternion multiplication.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from .geometry import (
    quat_conjugate,
    quat_identity,
    quat_multiply,
    quat_normalize,
    rotation_matrix,
    slerp,
    so3_exp,
    so3_log,
)

ERROR_DIM = 15
P_SLC = slice(0, 3)     # position error
V_SLC = slice(3, 6)     # velocity error
TH_SLC = slice(6, 9)    # attitude error (rotation vector)
BA_SLC = slice(9, 12)   # accelerometer bias error
BW_SLC = slice(12, 15)  # gyro bias error

GATE_COPLANARITY_TOL = 1e-6


class NonMonotonicTimestamp(ValueError):
    """Timestamps must strictly increase within a stream."""


class CornerLabel(IntEnum):
    TL = 0
    TR = 1
    BR = 2
    BL = 3


LABELS = (CornerLabel.TL, CornerLabel.TR, CornerLabel.BR, CornerLabel.BL)


# ---------------------------------------------------------------------------
# vehicle state
# ---------------------------------------------------------------------------

@dataclass
class NominalState:
    """Full vehicle state: position, velocity, attitude, IMU biases."""

    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    b_a: np.ndarray
    b_w: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.q = quat_normalize(self.q)
        self.b_a = np.asarray(self.b_a, dtype=float)
        self.b_w = np.asarray(self.b_w, dtype=float)

    @classmethod
    def at_pose(cls, p, q, t: float = 0.0) -> "NominalState":
        return cls(p=np.asarray(p, dtype=float), v=np.zeros(3), q=q,
                   b_a=np.zeros(3), b_w=np.zeros(3), t=t)

    def copy(self) -> "NominalState":
        return NominalState(self.p.copy(), self.v.copy(), self.q.copy(),
                            self.b_a.copy(), self.b_w.copy(), self.t)


def compose_state(nominal: NominalState, dx) -> NominalState:
    """Inject a 15-dim error into the nominal state (additive except attitude)."""
    dx = np.asarray(dx, dtype=float)
    return NominalState(
        p=nominal.p + dx[P_SLC],
        v=nominal.v + dx[V_SLC],
        q=quat_normalize(quat_multiply(nominal.q, so3_exp(dx[TH_SLC]))),
        b_a=nominal.b_a + dx[BA_SLC],
        b_w=nominal.b_w + dx[BW_SLC],
        t=nominal.t,
    )


def state_boxminus(a: NominalState, b: NominalState) -> np.ndarray:
    """Pose-only difference [p_a - p_b ; log(q_b^-1 * q_a)] (6-vector)."""
    dq = quat_multiply(quat_conjugate(b.q), a.q)
    return np.concatenate([a.p - b.p, so3_log(dq)])


def state_boxminus_full(a: NominalState, b: NominalState) -> np.ndarray:
    """Full 15-dim difference in error-state ordering (test / oracle helper)."""
    dq = quat_multiply(quat_conjugate(b.q), a.q)
    return np.concatenate([a.p - b.p, a.v - b.v, so3_log(dq),
                           a.b_a - b.b_a, a.b_w - b.b_w])


# ---------------------------------------------------------------------------
# sensors
# ---------------------------------------------------------------------------

@dataclass
class ImuSample:
    """One IMU reading: specific force [m/s^2] and angular rate [rad/s]."""

    t: float
    a_m: np.ndarray
    w_m: np.ndarray

    def __post_init__(self):
        self.a_m = np.asarray(self.a_m, dtype=float)
        self.w_m = np.asarray(self.w_m, dtype=float)


@dataclass
class NoiseParams:
    """IMU white-noise and bias random-walk densities plus gravity."""

    sigma_a: float = 0.02      # accel white noise [m/s^2/sqrt(Hz)]
    sigma_w: float = 0.002     # gyro white noise [rad/s/sqrt(Hz)]
    sigma_ba: float = 1e-4     # accel bias walk [m/s^3/sqrt(Hz)]
    sigma_bw: float = 1e-5     # gyro bias walk [rad/s^2/sqrt(Hz)]
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float)
        for name in ("sigma_a", "sigma_w", "sigma_ba", "sigma_bw"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


# ---------------------------------------------------------------------------
# gates and detections
# ---------------------------------------------------------------------------

def _rotation_zyx(yaw: float, pitch: float, roll: float) -> np.ndarray:
    qz = so3_exp([0.0, 0.0, yaw])
    qy = so3_exp([0.0, pitch, 0.0])
    qx = so3_exp([roll, 0.0, 0.0])
    return rotation_matrix(quat_multiply(quat_multiply(qz, qy), qx))


@dataclass
class Gate:
    """A racing gate: 4 world-frame inner corners ordered [TL, TR, BR, BL]."""

    id: int
    corners_w: np.ndarray

    def __post_init__(self):
        self.corners_w = np.asarray(self.corners_w, dtype=float).reshape(4, 3)
        for i in range(4):
            if np.allclose(self.corners_w[i], self.corners_w[(i + 1) % 4]):
                raise ValueError(f"gate {self.id}: consecutive corners coincide")
        centered = self.corners_w - self.corners_w.mean(axis=0)
        sv = np.linalg.svd(centered, compute_uv=False)
        if sv[2] > GATE_COPLANARITY_TOL:
            raise ValueError(
                f"gate {self.id}: corners are not coplanar (deviation {sv[2]:.2e} m)"
            )

    @classmethod
    def from_pose(cls, gate_id: int, center, yaw: float, pitch: float,
                  roll: float, width: float, height: float) -> "Gate":
        """Build the 4 inner corners from a center pose and inner extents.

        The gate-local frame has x through the gate, y left, z up; angles
        are yaw-pitch-roll in radians (ZYX).
        """
        center = np.asarray(center, dtype=float)
        R = _rotation_zyx(yaw, pitch, roll)
        left = R @ np.array([0.0, 1.0, 0.0])
        up = R @ np.array([0.0, 0.0, 1.0])
        hw, hh = 0.5 * width, 0.5 * height
        corners = np.array([
            center + hw * left + hh * up,   # TL
            center - hw * left + hh * up,   # TR
            center - hw * left - hh * up,   # BR
            center + hw * left - hh * up,   # BL
        ])
        return cls(id=gate_id, corners_w=corners)

    @property
    def centroid_w(self) -> np.ndarray:
        return self.corners_w.mean(axis=0)


@dataclass
class GateMap:
    """All gates of a track, keyed by unique id."""

    gates: list

    def __post_init__(self):
        ids = [g.id for g in self.gates]
        if len(ids) != len(set(ids)):
            raise ValueError("gate ids must be unique")
        self._by_id = {g.id: g for g in self.gates}

    def by_id(self, gate_id: int) -> Gate:
        return self._by_id[gate_id]

    def __iter__(self):
        return iter(self.gates)

    def __len__(self):
        return len(self.gates)


@dataclass
class GateDetection:
    """Per-frame corner observations of one gate.

    Corner slots are indexed by CornerLabel; a corner is present iff its
    score is > 0, in which case its pixel (and, once computed, normalized)
    position is finite. Absent slots are NaN.
    """

    t: float
    scores: np.ndarray
    corners_px: Optional[np.ndarray] = None
    corners_norm: Optional[np.ndarray] = None
    gate_id: Optional[int] = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float).reshape(4)
        if self.corners_px is not None:
            self.corners_px = np.asarray(self.corners_px, dtype=float).reshape(4, 2)
        if self.corners_norm is not None:
            self.corners_norm = np.asarray(self.corners_norm, dtype=float).reshape(4, 2)
        if self.corners_px is None and self.corners_norm is None:
            raise ValueError("detection needs pixel or normalized corners")
        present = self.scores > 0
        if not present.any():
            raise ValueError("detection must contain at least one corner")
        ref = self.corners_px if self.corners_px is not None else self.corners_norm
        finite = np.isfinite(ref).all(axis=1)
        if not np.array_equal(finite, present):
            raise ValueError("corner present (finite) iff its score > 0")

    @property
    def present(self) -> np.ndarray:
        return self.scores > 0

    @property
    def present_labels(self) -> list:
        return [lab for lab in LABELS if self.scores[lab] > 0]

    def replace_slots(self, mapping: dict) -> "GateDetection":
        """New detection with corner slots moved per {src_label: dst_label}."""
        scores = np.zeros(4)
        px = np.full((4, 2), np.nan) if self.corners_px is not None else None
        nm = np.full((4, 2), np.nan) if self.corners_norm is not None else None
        for src, dst in mapping.items():
            scores[dst] = self.scores[src]
            if px is not None:
                px[dst] = self.corners_px[src]
            if nm is not None:
                nm[dst] = self.corners_norm[src]
        return GateDetection(t=self.t, scores=scores, corners_px=px,
                             corners_norm=nm, gate_id=self.gate_id)


@dataclass
class CornerMeasurement:
    """A normalized 2D corner observation paired with its world gate corner."""

    u_norm: np.ndarray
    p_gw: np.ndarray
    gate_id: int
    corner_label: CornerLabel
    t: float

    def __post_init__(self):
        self.u_norm = np.asarray(self.u_norm, dtype=float)
        self.p_gw = np.asarray(self.p_gw, dtype=float)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Time-stamped states as packed arrays (t ascending)."""

    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        self.v = np.asarray(self.v, dtype=float).reshape(-1, 3)
        self.q = np.asarray(self.q, dtype=float).reshape(-1, 4)

    @classmethod
    def from_states(cls, states) -> "Trajectory":
        return cls(
            t=np.array([s.t for s in states]),
            p=np.array([s.p for s in states]),
            v=np.array([s.v for s in states]),
            q=np.array([s.q for s in states]),
        )

    def __len__(self):
        return len(self.t)

    def interpolate(self, t: float):
        """(p, v, q) at time t; linear for p/v, slerp for attitude.

        Returns None outside the covered span.
        """
        ts = self.t
        if t < ts[0] or t > ts[-1]:
            return None
        i = int(np.searchsorted(ts, t, side="right") - 1)
        if i >= len(ts) - 1:
            return self.p[-1].copy(), self.v[-1].copy(), self.q[-1].copy()
        dt = ts[i + 1] - ts[i]
        a = 0.0 if dt <= 0 else (t - ts[i]) / dt
        p = (1 - a) * self.p[i] + a * self.p[i + 1]
        v = (1 - a) * self.v[i] + a * self.v[i + 1]
        q = slerp(self.q[i], self.q[i + 1], a)
        return p, v, q

    def gap_at(self, t: float) -> float:
        """Length of the sample interval containing t (inf outside the span)."""
        ts = self.t
        if t < ts[0] or t > ts[-1]:
            return float("inf")
        i = int(np.searchsorted(ts, t, side="right") - 1)
        if i >= len(ts) - 1:
            return 0.0
        return float(ts[i + 1] - ts[i])


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)
