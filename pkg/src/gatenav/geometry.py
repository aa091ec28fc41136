"""Quaternion / SO(3) algebra, pinhole projection, and frame transforms.

Conventions used across the package:

* Quaternions are Hamilton, stored as numpy arrays ``[w, x, y, z]``, unit
  norm, and encode passive body-to-world rotations: ``v_w = R(q) @ v_b``.
* Rotation vectors follow the right-hand rule; ``so3_exp`` / ``so3_log``
  map between them and unit quaternions.
* The camera frame has z along the optical axis, x right, y down.
  ``project`` returns normalized image coordinates ``[x/z, y/z]``.
* Lens distortion is the 4-coefficient radial-tangential model
  (k1, k2, p1, p2); all-zero coefficients recover the pure pinhole model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEPTH_EPSILON = 1e-3   # minimum camera-frame depth for a valid projection [m]
SMALL_ANGLE = 1e-8     # below this norm, exp/log switch to Taylor branches
UNDISTORT_ITERS = 8
UNDISTORT_TOL = 1e-6


class BehindCamera(ValueError):
    """Point depth at or below DEPTH_EPSILON; the caller must drop it."""


class NoConvergence(RuntimeError):
    """Iterative undistortion did not reach the fixed-point tolerance."""


# ---------------------------------------------------------------------------
# quaternion / SO(3)
# ---------------------------------------------------------------------------

def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    return q / n


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a ⊗ b."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def rotation_matrix(q) -> np.ndarray:
    """3x3 rotation matrix of a unit quaternion (body-to-world)."""
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array([
        [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
        [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
        [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
    ])


def so3_exp(theta) -> np.ndarray:
    """Rotation vector -> unit quaternion (angle = ||theta||)."""
    theta = np.asarray(theta, dtype=float)
    a2 = theta[0] * theta[0] + theta[1] * theta[1] + theta[2] * theta[2]
    if a2 < SMALL_ANGLE * SMALL_ANGLE:
        # second-order Taylor of cos(a/2) and sin(a/2)/a
        w = 1.0 - a2 / 8.0
        s = 0.5 - a2 / 48.0
        return quat_normalize([w, s * theta[0], s * theta[1], s * theta[2]])
    a = math.sqrt(a2)
    s = math.sin(0.5 * a) / a
    return np.array([math.cos(0.5 * a), s * theta[0], s * theta[1], s * theta[2]])


def so3_log(q) -> np.ndarray:
    """Unit quaternion -> rotation vector with norm <= pi."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q
    vn = math.sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if vn < SMALL_ANGLE:
        # Taylor of 2*atan2(vn, w)/vn around vn = 0
        return (2.0 / q[0]) * (1.0 - vn * vn / (3.0 * q[0] * q[0])) * q[1:]
    angle = 2.0 * math.atan2(vn, q[0])
    return (angle / vn) * q[1:]


def skew(v) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def so3_right_jacobian_inv(theta) -> np.ndarray:
    """Inverse right Jacobian of SO(3) at rotation vector theta."""
    theta = np.asarray(theta, dtype=float)
    t2 = float(theta @ theta)
    S = skew(theta)
    if t2 < 1e-8:
        return np.eye(3) + 0.5 * S + (1.0 / 12.0) * (S @ S)
    t = math.sqrt(t2)
    coef = 1.0 / t2 - (1.0 + math.cos(t)) / (2.0 * t * math.sin(t))
    return np.eye(3) + 0.5 * S + coef * (S @ S)


def slerp(q0, q1, alpha: float) -> np.ndarray:
    """Spherical interpolation between two unit quaternions."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    dot = float(q0 @ q1)
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(q0 + alpha * (q1 - q0))
    ang = math.acos(min(dot, 1.0))
    s = math.sin(ang)
    return quat_normalize(
        (math.sin((1.0 - alpha) * ang) / s) * q0 + (math.sin(alpha * ang) / s) * q1
    )


# ---------------------------------------------------------------------------
# camera model
# ---------------------------------------------------------------------------

@dataclass
class CameraModel:
    """Pinhole intrinsics with radial-tangential distortion."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width) or not (0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass
class Extrinsics:
    """Camera-to-body rotation q_bc and camera position p_bc in the body frame."""

    q_bc: np.ndarray
    p_bc: np.ndarray

    def __post_init__(self):
        self.q_bc = quat_normalize(self.q_bc)
        self.p_bc = np.asarray(self.p_bc, dtype=float)
        self.R_bc = rotation_matrix(self.q_bc)


def project(p_c) -> np.ndarray:
    """Perspective projection to normalized image coordinates."""
    z = p_c[2]
    if z <= DEPTH_EPSILON:
        raise BehindCamera(f"depth {z:.3e} <= {DEPTH_EPSILON}")
    return np.array([p_c[0] / z, p_c[1] / z])


def project_jacobian(p_c) -> np.ndarray:
    """2x3 Jacobian of project() at a camera-frame point."""
    x, y, z = p_c
    if z <= DEPTH_EPSILON:
        raise BehindCamera(f"depth {z:.3e} <= {DEPTH_EPSILON}")
    iz = 1.0 / z
    iz2 = iz * iz
    return np.array([
        [iz, 0.0, -x * iz2],
        [0.0, iz, -y * iz2],
    ])


def _apply_distortion(x: float, y: float, cam: CameraModel):
    r2 = x * x + y * y
    radial = 1.0 + cam.k1 * r2 + cam.k2 * r2 * r2
    xd = x * radial + 2.0 * cam.p1 * x * y + cam.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + cam.p1 * (r2 + 2.0 * y * y) + 2.0 * cam.p2 * x * y
    return xd, yd


def distort_to_pixel(xy_norm, cam: CameraModel) -> np.ndarray:
    """Normalized image coordinates -> distorted pixel coordinates."""
    xd, yd = _apply_distortion(xy_norm[0], xy_norm[1], cam)
    return np.array([cam.fx * xd + cam.cx, cam.fy * yd + cam.cy])


def undistort_normalize(uv_px, cam: CameraModel) -> np.ndarray:
    """Pixel coordinates -> undistorted normalized coordinates.

    Fixed-point iteration (UNDISTORT_ITERS rounds); raises NoConvergence if the
    forward-distorted result still misses by more than UNDISTORT_TOL in
    normalized units. Out-of-bounds pixels are allowed.
    """
    xd = (uv_px[0] - cam.cx) / cam.fx
    yd = (uv_px[1] - cam.cy) / cam.fy
    x, y = xd, yd
    for _ in range(UNDISTORT_ITERS):
        r2 = x * x + y * y
        radial = 1.0 + cam.k1 * r2 + cam.k2 * r2 * r2
        dx = 2.0 * cam.p1 * x * y + cam.p2 * (r2 + 2.0 * x * x)
        dy = cam.p1 * (r2 + 2.0 * y * y) + 2.0 * cam.p2 * x * y
        x = (xd - dx) / radial
        y = (yd - dy) / radial
    rx, ry = _apply_distortion(x, y, cam)
    if math.hypot(rx - xd, ry - yd) > UNDISTORT_TOL:
        raise NoConvergence(f"undistortion residual > {UNDISTORT_TOL}")
    return np.array([x, y])


# ---------------------------------------------------------------------------
# frame transforms
# ---------------------------------------------------------------------------

def world_to_camera(p_w, p_wb, q_wb, ext: Extrinsics) -> np.ndarray:
    """World point -> camera frame through the body pose and extrinsics."""
    p_b = rotation_matrix(q_wb).T @ (np.asarray(p_w, dtype=float) - p_wb)
    return ext.R_bc.T @ (p_b - ext.p_bc)


def camera_to_world(p_c, p_wb, q_wb, ext: Extrinsics) -> np.ndarray:
    """Camera point -> world frame (inverse of world_to_camera)."""
    p_b = ext.R_bc @ np.asarray(p_c, dtype=float) + ext.p_bc
    return rotation_matrix(q_wb) @ p_b + p_wb
