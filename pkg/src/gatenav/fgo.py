"""Offline full-batch factor-graph smoother.

Keyframe states (position, velocity, attitude, biases) plus one shared
camera-to-body rotation are optimized by sparse Levenberg-Marquardt over

    sum ||r_imu||^2_Sigma + sum rho(||r_corner||^2_Sigma)
      + sum ||r_prior||^2_Sigma + ||r_ext||^2_Sigma

with a Huber loss on the corner factors only. Quaternion blocks are retracted
through the same right-multiplicative error used by the filter, so corner
residuals here are bit-comparable with the filter's innovation terms.

Bias handling: preintegrated increments are rebuilt from retained samples
whenever a keyframe's bias estimate moves more than BIAS_REBUILD_TOL from the
linearization point, instead of carrying first-order bias Jacobians. The
residuals therefore expose no bias gradient and biases stay at their
initialization unless other factors move them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .geometry import (
    DEPTH_EPSILON,
    BehindCamera,
    Extrinsics,
    quat_conjugate,
    quat_multiply,
    quat_normalize,
    rotation_matrix,
    skew,
    so3_exp,
    so3_log,
    so3_right_jacobian_inv,
)
from .preintegrate import PreintegratedImu, preintegrate
from .state import (
    CornerMeasurement,
    NoiseParams,
    NominalState,
    Trajectory,
    compose_state,
    state_boxminus,
    symmetrize,
)

BIAS_REBUILD_TOL = 1e-3
LAMBDA_MIN = 1e-12
LAMBDA_MAX = 1e12
IMU_COV_FLOOR = 1e-7   # keeps short-gap information matrices finite-precision safe
STEP_TOL = 1e-12


class SingularNormalEquations(RuntimeError):
    """Damped normal equations stayed unsolvable after repeated escalation."""


@dataclass
class FgoWeights:
    """Factor covariances (all SPD), corner robust threshold, and the
    visual-less keyframe time threshold."""

    sigma_corner: np.ndarray = field(default_factory=lambda: (0.005 ** 2) * np.eye(2))
    sigma_prior: np.ndarray = field(
        default_factory=lambda: np.diag([0.5 ** 2] * 3 + [math.radians(5.0) ** 2] * 3))
    sigma_ext: np.ndarray = field(
        default_factory=lambda: (math.radians(2.0) ** 2) * np.eye(3))
    huber_delta_corner: float = 3.0
    kf_time_threshold: float = 0.1
    sigma_imu: Optional[np.ndarray] = None   # override; default per-factor cov9

    def __post_init__(self):
        for name in ("sigma_corner", "sigma_prior", "sigma_ext"):
            M = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, M)
            if not np.allclose(M, M.T) or np.linalg.eigvalsh(M).min() <= 0:
                raise ValueError(f"{name} must be symmetric positive definite")
        if self.huber_delta_corner <= 0 or self.kf_time_threshold <= 0:
            raise ValueError("huber_delta_corner and kf_time_threshold must be > 0")


@dataclass
class Keyframe:
    t: float
    state: NominalState
    measurements: list = field(default_factory=list)
    vins_prior: Optional[NominalState] = None


@dataclass
class FactorGraph:
    keyframes: list
    preints: list
    ext_rotation: np.ndarray          # decision variable q_bc
    ext_rotation_nominal: np.ndarray  # prior q_bc
    p_bc: np.ndarray                  # held fixed
    weights: FgoWeights
    gravity: np.ndarray

    def __post_init__(self):
        if len(self.preints) != len(self.keyframes) - 1:
            raise ValueError("need exactly one preintegration per keyframe pair")
        ts = [k.t for k in self.keyframes]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("keyframe timestamps must strictly increase")
        self.ext_rotation = quat_normalize(self.ext_rotation)
        self.ext_rotation_nominal = quat_normalize(self.ext_rotation_nominal)
        self.p_bc = np.asarray(self.p_bc, dtype=float)
        self.gravity = np.asarray(self.gravity, dtype=float)


@dataclass
class FgoResult:
    trajectory: Trajectory
    states: list
    ext_rotation: np.ndarray
    final_cost: float
    iterations: list
    converged: bool


# ---------------------------------------------------------------------------
# residuals and Jacobians
# ---------------------------------------------------------------------------

def imu_residual(x_k: NominalState, x_k1: NominalState,
                 preint: PreintegratedImu, gravity) -> np.ndarray:
    """9-vector [position, velocity, log-attitude] preintegration residual."""
    g = np.asarray(gravity, dtype=float)
    T = preint.dt_total
    Rk_T = rotation_matrix(x_k.q).T
    r_p = Rk_T @ (x_k1.p - x_k.p - x_k.v * T - 0.5 * g * T * T) - preint.dp
    r_v = Rk_T @ (x_k1.v - x_k.v - g * T) - preint.dv
    dq_err = quat_multiply(quat_conjugate(preint.dq),
                           quat_multiply(quat_conjugate(x_k.q), x_k1.q))
    return np.concatenate([r_p, r_v, so3_log(dq_err)])


def imu_residual_jacobians(x_k: NominalState, x_k1: NominalState,
                           preint: PreintegratedImu, gravity):
    """(r, J_k, J_k1) with J of shape 9x15 over [dp, dv, dtheta, db_a, db_w].

    Bias columns are zero by the re-preintegration design; increments are
    treated as constants at the current bias linearization.
    """
    g = np.asarray(gravity, dtype=float)
    T = preint.dt_total
    Rk = rotation_matrix(x_k.q)
    Rk_T = Rk.T
    a = x_k1.p - x_k.p - x_k.v * T - 0.5 * g * T * T
    b = x_k1.v - x_k.v - g * T
    r_p = Rk_T @ a - preint.dp
    r_v = Rk_T @ b - preint.dv
    dq_err = quat_multiply(quat_conjugate(preint.dq),
                           quat_multiply(quat_conjugate(x_k.q), x_k1.q))
    r_q = so3_log(dq_err)
    r = np.concatenate([r_p, r_v, r_q])

    Jinv = so3_right_jacobian_inv(r_q)
    R_rel_T = rotation_matrix(quat_multiply(quat_conjugate(x_k.q), x_k1.q)).T

    J_k = np.zeros((9, 15))
    J_k[0:3, 0:3] = -Rk_T
    J_k[0:3, 3:6] = -T * Rk_T
    J_k[0:3, 6:9] = skew(Rk_T @ a)
    J_k[3:6, 3:6] = -Rk_T
    J_k[3:6, 6:9] = skew(Rk_T @ b)
    J_k[6:9, 6:9] = -Jinv @ R_rel_T

    J_k1 = np.zeros((9, 15))
    J_k1[0:3, 0:3] = Rk_T
    J_k1[3:6, 3:6] = Rk_T
    J_k1[6:9, 6:9] = Jinv
    return r, J_k, J_k1


def corner_residual(x_k: NominalState, ext_rotation, p_bc,
                    z: CornerMeasurement) -> np.ndarray:
    """2-vector reprojection residual using the graph's extrinsics rotation."""
    R_bc = rotation_matrix(ext_rotation)
    d_body = rotation_matrix(x_k.q).T @ (z.p_gw - x_k.p)
    p_c = R_bc.T @ (d_body - np.asarray(p_bc, dtype=float))
    if p_c[2] <= DEPTH_EPSILON:
        raise BehindCamera(f"corner depth {p_c[2]:.3e}")
    return z.u_norm - np.array([p_c[0] / p_c[2], p_c[1] / p_c[2]])


def corner_residual_jacobians(x_k: NominalState, ext_rotation, p_bc,
                              z: CornerMeasurement):
    """(r, J_state 2x15, J_ext 2x3)."""
    R_bc = rotation_matrix(ext_rotation)
    R_wb = rotation_matrix(x_k.q)
    d_body = R_wb.T @ (z.p_gw - x_k.p)
    p_c = R_bc.T @ (d_body - np.asarray(p_bc, dtype=float))
    zc = p_c[2]
    if zc <= DEPTH_EPSILON:
        raise BehindCamera(f"corner depth {zc:.3e}")
    izc = 1.0 / zc
    r = z.u_norm - np.array([p_c[0] * izc, p_c[1] * izc])
    J_pi = np.array([
        [izc, 0.0, -p_c[0] * izc * izc],
        [0.0, izc, -p_c[1] * izc * izc],
    ])
    J_state = np.zeros((2, 15))
    J_state[:, 0:3] = -J_pi @ (-(R_bc.T @ R_wb.T))
    J_state[:, 6:9] = -J_pi @ (R_bc.T @ skew(d_body))
    J_ext = -J_pi @ skew(p_c)
    return r, J_state, J_ext


def prior_residual(x_k: NominalState, vins_state: NominalState) -> np.ndarray:
    """Pose-only anchor to the real-time estimate (6-vector)."""
    return state_boxminus(x_k, vins_state)


def prior_residual_jacobian(x_k: NominalState, vins_state: NominalState):
    r = state_boxminus(x_k, vins_state)
    J = np.zeros((6, 15))
    J[0:3, 0:3] = np.eye(3)
    J[3:6, 6:9] = so3_right_jacobian_inv(r[3:6])
    return r, J


def extrinsics_residual(ext_rotation, nominal_ext) -> np.ndarray:
    """Log of the relative rotation between refined and nominal extrinsics."""
    return so3_log(quat_multiply(quat_conjugate(nominal_ext), ext_rotation))


def extrinsics_residual_jacobian(ext_rotation, nominal_ext):
    r = extrinsics_residual(ext_rotation, nominal_ext)
    return r, so3_right_jacobian_inv(r)


# ---------------------------------------------------------------------------
# keyframe selection and graph construction
# ---------------------------------------------------------------------------

def select_keyframes(measurement_frames, imu_end_t: float, tau_t: float,
                     tol: float = 1e-9):
    """Keyframe timestamps: every frame with measurements, plus visual-less
    keyframes stepped at tau_t so no inter-keyframe gap exceeds tau_t."""
    if tau_t <= 0:
        raise ValueError("tau_t must be > 0")
    meas_times = sorted(t for t, meas in measurement_frames if meas)
    if not meas_times:
        return []
    out = [meas_times[0]]
    for tm in meas_times[1:]:
        while tm - out[-1] >= tau_t - tol:
            cand = out[-1] + tau_t
            if tm - cand <= tol:
                break
            out.append(cand)
        out.append(tm)
    while imu_end_t - out[-1] >= tau_t - tol:
        cand = out[-1] + tau_t
        if cand > imu_end_t + tol:
            break
        out.append(cand)
    return out


def build_graph(imu_samples, measurement_frames, vins: Trajectory,
                ext_nominal: Extrinsics, weights: FgoWeights,
                noise: NoiseParams, vins_biases=None) -> FactorGraph:
    """Assemble keyframes, priors, and preintegrations from a filter run.

    measurement_frames: list of (t, [CornerMeasurement]) in time order.
    vins_biases: optional (t array, b_a array Nx3, b_w array Nx3) used to
    initialize keyframe biases and preintegration linearization points.
    """
    kf_times = select_keyframes(measurement_frames, imu_samples[-1].t,
                                weights.kf_time_threshold)
    if len(kf_times) < 2:
        raise ValueError("need at least 2 keyframes")
    frames = {t: meas for t, meas in measurement_frames if meas}

    def bias_at(t):
        if vins_biases is None:
            return np.zeros(3), np.zeros(3)
        bt, ba, bw = vins_biases
        i = min(np.searchsorted(bt, t), len(bt) - 1)
        return np.asarray(ba[i], dtype=float), np.asarray(bw[i], dtype=float)

    keyframes = []
    for t in kf_times:
        interp = vins.interpolate(t)
        if interp is None:
            # clamp to the nearest trajectory endpoint
            idx = 0 if t < vins.t[0] else -1
            interp = (vins.p[idx], vins.v[idx], vins.q[idx])
        p, v, q = interp
        b_a, b_w = bias_at(t)
        st = NominalState(p=p.copy(), v=v.copy(), q=q.copy(),
                          b_a=b_a, b_w=b_w, t=t)
        prior = NominalState(p=p.copy(), v=v.copy(), q=q.copy(),
                             b_a=np.zeros(3), b_w=np.zeros(3), t=t)
        keyframes.append(Keyframe(t=t, state=st,
                                  measurements=list(frames.get(t, [])),
                                  vins_prior=prior))

    times = np.array([s.t for s in imu_samples])
    preints = []
    for a, b in zip(keyframes, keyframes[1:]):
        lo = int(np.searchsorted(times, a.t, side="right"))
        hi = int(np.searchsorted(times, b.t, side="right"))
        if hi < len(imu_samples):
            hi += 1  # one past the end so the tail interval is covered
        seg = imu_samples[lo:hi]
        if not seg:
            seg = [imu_samples[min(lo, len(imu_samples) - 1)]]
        preints.append(preintegrate(seg, (a.state.b_a, a.state.b_w), noise,
                                    t_start=a.t, t_end=b.t))

    return FactorGraph(keyframes=keyframes, preints=preints,
                       ext_rotation=ext_nominal.q_bc.copy(),
                       ext_rotation_nominal=ext_nominal.q_bc.copy(),
                       p_bc=ext_nominal.p_bc.copy(), weights=weights,
                       gravity=noise.gravity)


# ---------------------------------------------------------------------------
# Levenberg-Marquardt
# ---------------------------------------------------------------------------

def _graph_noise(graph: FactorGraph) -> NoiseParams:
    return NoiseParams(gravity=graph.gravity)


def _info_matrices(graph: FactorGraph):
    """Per-factor inverse covariances (information matrices)."""
    w = graph.weights
    if w.sigma_imu is not None:
        imu_inf = [np.linalg.inv(w.sigma_imu)] * len(graph.preints)
    else:
        imu_inf = []
        for pre in graph.preints:
            C = symmetrize(pre.cov9) + IMU_COV_FLOOR * np.eye(9)
            imu_inf.append(np.linalg.inv(C))
    return {
        "imu": imu_inf,
        "corner": np.linalg.inv(w.sigma_corner),
        "prior": np.linalg.inv(w.sigma_prior),
        "ext": np.linalg.inv(w.sigma_ext),
    }


def _huber_cost_weight(e: float, delta: float):
    """(cost contribution, IRLS weight) for whitened residual norm e."""
    if e <= delta:
        return e * e, 1.0
    return delta * (2.0 * e - delta), delta / e


def _evaluate(graph: FactorGraph, states, q_bc, info, with_system: bool):
    """Total robust cost and, optionally, the damped-ready (H, g) system."""
    n_kf = len(states)
    dim = 15 * n_kf + 3
    ext_off = 15 * n_kf
    cost = 0.0
    if with_system:
        H = np.zeros(0)  # placeholder, assembled via triplets below
        rows, cols, vals = [], [], []
        g = np.zeros(dim)

        def add_block(r0, c0, B):
            br, bc = B.shape
            rr, cc = np.meshgrid(np.arange(r0, r0 + br),
                                 np.arange(c0, c0 + bc), indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append(B.ravel())

    w = graph.weights
    for i, pre in enumerate(graph.preints):
        W = info["imu"][i]
        if with_system:
            r, J_k, J_k1 = imu_residual_jacobians(states[i], states[i + 1],
                                                  pre, graph.gravity)
        else:
            r = imu_residual(states[i], states[i + 1], pre, graph.gravity)
        cost += float(r @ W @ r)
        if with_system:
            WJk = W @ J_k
            WJk1 = W @ J_k1
            add_block(15 * i, 15 * i, J_k.T @ WJk)
            add_block(15 * (i + 1), 15 * (i + 1), J_k1.T @ WJk1)
            B = J_k.T @ WJk1
            add_block(15 * i, 15 * (i + 1), B)
            add_block(15 * (i + 1), 15 * i, B.T)
            g[15 * i:15 * i + 15] += J_k.T @ (W @ r)
            g[15 * (i + 1):15 * (i + 1) + 15] += J_k1.T @ (W @ r)

    Wc = info["corner"]
    delta = w.huber_delta_corner
    for i, kf in enumerate(graph.keyframes):
        for z in kf.measurements:
            try:
                if with_system:
                    r, J_s, J_e = corner_residual_jacobians(
                        states[i], q_bc, graph.p_bc, z)
                else:
                    r = corner_residual(states[i], q_bc, graph.p_bc, z)
            except BehindCamera:
                continue  # factor deactivated this iteration
            e = math.sqrt(max(float(r @ Wc @ r), 0.0))
            c, irls = _huber_cost_weight(e, delta)
            cost += c
            if with_system:
                Wr = irls * Wc
                add_block(15 * i, 15 * i, J_s.T @ Wr @ J_s)
                add_block(ext_off, ext_off, J_e.T @ Wr @ J_e)
                B = J_s.T @ Wr @ J_e
                add_block(15 * i, ext_off, B)
                add_block(ext_off, 15 * i, B.T)
                g[15 * i:15 * i + 15] += J_s.T @ (Wr @ r)
                g[ext_off:ext_off + 3] += J_e.T @ (Wr @ r)

    Wp = info["prior"]
    for i, kf in enumerate(graph.keyframes):
        if kf.vins_prior is None:
            continue
        if with_system:
            r, J = prior_residual_jacobian(states[i], kf.vins_prior)
        else:
            r = prior_residual(states[i], kf.vins_prior)
        cost += float(r @ Wp @ r)
        if with_system:
            WJ = Wp @ J
            add_block(15 * i, 15 * i, J.T @ WJ)
            g[15 * i:15 * i + 15] += J.T @ (Wp @ r)

    We = info["ext"]
    if with_system:
        r, J = extrinsics_residual_jacobian(q_bc, graph.ext_rotation_nominal)
    else:
        r = extrinsics_residual(q_bc, graph.ext_rotation_nominal)
    cost += float(r @ We @ r)
    if with_system:
        WJ = We @ J
        add_block(ext_off, ext_off, J.T @ WJ)
        g[ext_off:ext_off + 3] += J.T @ (We @ r)

    if not with_system:
        return cost, None, None
    H = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim)).tocsc()
    return cost, H, g


def _retract(states, q_bc, delta):
    new_states = [compose_state(s, delta[15 * i:15 * i + 15])
                  for i, s in enumerate(states)]
    new_q = quat_normalize(quat_multiply(q_bc, so3_exp(delta[-3:])))
    return new_states, new_q


def _rebuild_preints(graph: FactorGraph, states, info, force: bool = False) -> int:
    """Re-preintegrate segments whose bias linearization drifted; returns the
    number of rebuilt factors."""
    noise = _graph_noise(graph)
    n = 0
    for i, pre in enumerate(graph.preints):
        b_a, b_w = states[i].b_a, states[i].b_w
        if (force
                or np.linalg.norm(b_a - pre.bias_lin[0]) > BIAS_REBUILD_TOL
                or np.linalg.norm(b_w - pre.bias_lin[1]) > BIAS_REBUILD_TOL):
            graph.preints[i] = preintegrate(pre.samples, (b_a, b_w), noise,
                                            t_start=pre.t_start, t_end=pre.t_end)
            C = symmetrize(graph.preints[i].cov9) + IMU_COV_FLOOR * np.eye(9)
            info["imu"][i] = np.linalg.inv(C)
            n += 1
    return n


def optimize(graph: FactorGraph, max_iters: int = 50,
             lambda_init: float = 1e-6) -> FgoResult:
    """Sparse Levenberg-Marquardt over the product manifold.

    Terminates on relative cost decrease < 1e-8, gradient inf-norm < 1e-8,
    or max_iters. Accepted steps never increase the robust cost.
    """
    if len(graph.keyframes) < 2:
        raise ValueError("graph needs at least 2 keyframes")
    states = [kf.state.copy() for kf in graph.keyframes]
    q_bc = graph.ext_rotation.copy()
    info = _info_matrices(graph)

    lam = lambda_init
    cost, H, g = _evaluate(graph, states, q_bc, info, with_system=True)
    log = []
    converged = False
    dim = H.shape[0]
    I = sp.identity(dim, format="csc")

    for it in range(max_iters):
        grad_norm = float(np.abs(g).max()) if g.size else 0.0
        if grad_norm < 1e-8:
            converged = True
            log.append({"iter": it, "cost": cost, "lambda": lam,
                        "accepted": True, "grad_norm": grad_norm,
                        "repreint": 0, "note": "gradient_converged"})
            break

        delta = None
        escalations = 0
        while escalations <= 10:
            try:
                cand = spsolve(H + lam * I, -g)
                if np.all(np.isfinite(cand)):
                    delta = cand
                    break
            except Exception:
                pass
            lam = min(lam * 10.0, LAMBDA_MAX)
            escalations += 1
        if delta is None:
            raise SingularNormalEquations(
                f"normal equations unsolvable after {escalations} escalations")

        if float(np.abs(delta).max()) < STEP_TOL:
            converged = True
            log.append({"iter": it, "cost": cost, "lambda": lam,
                        "accepted": False, "grad_norm": grad_norm,
                        "repreint": 0, "note": "step_converged"})
            break

        new_states, new_q = _retract(states, q_bc, delta)
        new_cost, _, _ = _evaluate(graph, new_states, new_q, info,
                                   with_system=False)
        accepted = new_cost < cost
        entry = {"iter": it, "cost": cost, "new_cost": new_cost, "lambda": lam,
                 "accepted": accepted, "grad_norm": grad_norm, "repreint": 0}
        if accepted:
            rel_drop = (cost - new_cost) / max(cost, 1e-300)
            states, q_bc = new_states, new_q
            entry["repreint"] = _rebuild_preints(graph, states, info)
            cost, H, g = _evaluate(graph, states, q_bc, info, with_system=True)
            lam = max(lam / 3.0, LAMBDA_MIN)
            log.append(entry)
            if rel_drop < 1e-8:
                converged = True
                break
        else:
            log.append(entry)
            if abs(new_cost - cost) <= 1e-8 * max(cost, 1e-300):
                converged = True  # plateau: no attainable decrease
                break
            lam = min(lam * 4.0, LAMBDA_MAX)

    for s, kf in zip(states, graph.keyframes):
        s.t = kf.t
    return FgoResult(trajectory=Trajectory.from_states(states), states=states,
                     ext_rotation=q_bc, final_cost=cost, iterations=log,
                     converged=converged)


# ---------------------------------------------------------------------------
# shared-bias refinement (outer loop)
# ---------------------------------------------------------------------------

def refine_shared_bias(graph: FactorGraph, states, info, step_cap: float = 0.5):
    """One Gauss-Newton step on a bias correction common to all keyframes.

    The correction is evaluated through full re-preintegration (finite
    differences over the 6 bias components), so the increments stay exact at
    the updated linearization. Returns the applied 6-vector step.
    """
    noise = _graph_noise(graph)
    base_sets = [(pre.samples, pre.bias_lin, pre.t_start, pre.t_end)
                 for pre in graph.preints]

    def preints_at(db_a, db_w):
        return [preintegrate(samples, (lin[0] + db_a, lin[1] + db_w), noise,
                             t_start=t0, t_end=t1)
                for samples, lin, t0, t1 in base_sets]

    def residuals(preints):
        rs = []
        for i, pre in enumerate(preints):
            r = imu_residual(states[i], states[i + 1], pre, graph.gravity)
            rs.append(np.linalg.cholesky(info["imu"][i]).T @ r)
        return np.concatenate(rs)

    r0 = residuals(graph.preints)
    eps = 1e-4
    J = np.zeros((r0.size, 6))
    for j in range(6):
        db = np.zeros(6)
        db[j] = eps
        r1 = residuals(preints_at(db[:3], db[3:]))
        J[:, j] = (r1 - r0) / eps

    H = J.T @ J
    g = J.T @ r0
    try:
        step = np.linalg.solve(H + 1e-9 * np.eye(6), -g)
    except np.linalg.LinAlgError:
        return np.zeros(6)
    n = np.linalg.norm(step)
    if n > step_cap:
        step *= step_cap / n
    if not np.all(np.isfinite(step)):
        return np.zeros(6)

    for s in states:
        s.b_a = s.b_a + step[:3]
        s.b_w = s.b_w + step[3:]
    for kf, s in zip(graph.keyframes, states):
        kf.state.b_a = s.b_a.copy()
        kf.state.b_w = s.b_w.copy()
    _rebuild_preints(graph, states, info, force=True)
    return step


def smooth_with_bias_refinement(graph: FactorGraph, max_iters: int = 50,
                                lambda_init: float = 1e-6,
                                bias_rounds: int = 2,
                                bias_tol: float = 1e-5) -> FgoResult:
    """optimize() plus an outer coordinate-descent over a shared IMU bias.

    The inner LM leaves biases at their initialization (their gradient is
    zero under the re-preintegration contract); the outer rounds correct the
    common bias error inherited from the real-time filter, which otherwise
    biases the preintegration factors and leaks into the refined extrinsics.
    """
    result = optimize(graph, max_iters=max_iters, lambda_init=lambda_init)
    info = _info_matrices(graph)
    for _ in range(bias_rounds):
        for kf, s in zip(graph.keyframes, result.states):
            kf.state = s.copy()
        graph.ext_rotation = result.ext_rotation.copy()
        step = refine_shared_bias(graph, [kf.state for kf in graph.keyframes],
                                  info)
        if np.linalg.norm(step) < bias_tol:
            break
        result = optimize(graph, max_iters=max_iters, lambda_init=lambda_init)
    return result
