import numpy as np
import pytest

from gatenav.eskf import EskfConfig, EskfEstimator
from gatenav.fgo import imu_residual
from gatenav.geometry import quat_normalize, rotation_matrix
from gatenav.preintegrate import EmptyStream, preintegrate
from gatenav.state import ImuSample, NoiseParams, NominalState, NonMonotonicTimestamp

RNG = np.random.default_rng(5)
NOISE = NoiseParams()
GRAVITY = NOISE.gravity


def test_single_sample_zero_motion():
    # zero net rate/force after bias correction, no time span
    s = ImuSample(t=0.1, a_m=[0.05, 0, 0], w_m=[0.01, 0, 0])
    pre = preintegrate([s], ([0.05, 0, 0], [0.01, 0, 0]), NOISE)
    np.testing.assert_array_equal(pre.dp, np.zeros(3))
    np.testing.assert_array_equal(pre.dv, np.zeros(3))
    np.testing.assert_allclose(pre.dq, [1, 0, 0, 0], atol=1e-15)


def test_constant_acceleration():
    dt = 1.0 / 500.0
    samples = [ImuSample(t=(k + 1) * dt, a_m=[1.0, 0, 0], w_m=np.zeros(3))
               for k in range(500)]
    pre = preintegrate(samples, (np.zeros(3), np.zeros(3)), NOISE, t_start=0.0)
    np.testing.assert_allclose(pre.dv, [1.0, 0, 0], atol=1e-3)
    np.testing.assert_allclose(pre.dp, [0.5, 0, 0], atol=1e-3)
    assert pre.dt_total == pytest.approx(1.0)


def test_errors():
    with pytest.raises(EmptyStream):
        preintegrate([], (np.zeros(3), np.zeros(3)), NOISE)
    bad = [ImuSample(t=0.1, a_m=np.zeros(3), w_m=np.zeros(3)),
           ImuSample(t=0.1, a_m=np.zeros(3), w_m=np.zeros(3))]
    with pytest.raises(NonMonotonicTimestamp):
        preintegrate(bad, (np.zeros(3), np.zeros(3)), NOISE)


def dead_reckon(x0, samples, gravity):
    """Full-rate nominal propagation (the filter's own model)."""
    est = EskfEstimator(x0.copy(), np.eye(15),
                        EskfConfig(noise=NoiseParams(gravity=gravity)))
    est.last_imu_t = x0.t
    for s in samples:
        est.propagate(s)
    return est.nominal


def test_residual_zero_at_integrated_states():
    """Eq-of-motion consistency: states produced by forward-integrating the
    same samples make the preintegration residual vanish."""
    for trial in range(10):
        rng = np.random.default_rng(trial)
        x0 = NominalState(p=rng.normal(size=3), v=rng.normal(size=3),
                          q=quat_normalize(rng.normal(size=4)),
                          b_a=rng.normal(size=3) * 0.05,
                          b_w=rng.normal(size=3) * 0.005, t=0.0)
        dt = 0.002
        samples = [ImuSample(t=(k + 1) * dt,
                             a_m=rng.normal(0, 3, 3) + [0, 0, 9.0],
                             w_m=rng.normal(0, 1.5, 3))
                   for k in range(50)]
        x1 = dead_reckon(x0, samples, GRAVITY)
        pre = preintegrate(samples, (x0.b_a, x0.b_w), NOISE, t_start=0.0)
        r = imu_residual(x0, x1, pre, GRAVITY)
        assert np.abs(r).max() < 1e-9


def test_residual_small_on_simulated_flight():
    """Noiseless simulated IMU: the residual at dead-reckoned states stays at
    solver precision over realistic keyframe gaps."""
    from gatenav.sim import CorruptionSpec, TrajectorySpec, generate_trajectory, synthesize_imu

    spec = TrajectorySpec(kind="ellipse", duration=1.0, period=4.0)
    truth = generate_trajectory(spec, imu_rate_hz=500.0)
    corr = CorruptionSpec(bias_true=((0, 0, 0), (0, 0, 0)))
    imu = synthesize_imu(truth, corr, NOISE, seed=0, noise_free=True)

    x0 = NominalState(p=truth[0].p, v=truth[0].v, q=truth[0].q,
                      b_a=np.zeros(3), b_w=np.zeros(3), t=truth[0].t)
    x_prev = x0
    for start in range(0, 450, 50):
        seg = imu[start:start + 50]
        x_next = dead_reckon(x_prev, seg, GRAVITY)
        pre = preintegrate(seg, (np.zeros(3), np.zeros(3)), NOISE,
                           t_start=x_prev.t, t_end=seg[-1].t)
        r = imu_residual(x_prev, x_next, pre, GRAVITY)
        assert np.abs(r).max() < 1e-6
        x_prev = x_next


def test_interval_clipping():
    """Samples outside [t_start, t_end] contribute only their clipped spans."""
    dt = 0.01
    samples = [ImuSample(t=k * dt, a_m=[2.0, 0, 0], w_m=np.zeros(3))
               for k in range(1, 21)]
    pre = preintegrate(samples, (np.zeros(3), np.zeros(3)), NOISE,
                       t_start=0.055, t_end=0.125)
    assert pre.dt_total == pytest.approx(0.07)
    np.testing.assert_allclose(pre.dv, [0.14, 0, 0], atol=1e-12)


def test_covariance_psd_and_grows():
    dt = 0.002
    samples = [ImuSample(t=(k + 1) * dt, a_m=RNG.normal(0, 2, 3),
                         w_m=RNG.normal(0, 1, 3)) for k in range(100)]
    pre_short = preintegrate(samples[:10], (np.zeros(3), np.zeros(3)), NOISE,
                             t_start=0.0)
    pre_long = preintegrate(samples, (np.zeros(3), np.zeros(3)), NOISE,
                            t_start=0.0)
    for pre in (pre_short, pre_long):
        np.testing.assert_allclose(pre.cov9, pre.cov9.T, atol=1e-18)
        assert np.linalg.eigvalsh(pre.cov9).min() >= -1e-18
    assert np.trace(pre_long.cov9) > np.trace(pre_short.cov9)


def test_retains_samples_and_bias():
    samples = [ImuSample(t=0.002 * (k + 1), a_m=np.zeros(3), w_m=np.zeros(3))
               for k in range(5)]
    bias = (np.array([0.1, 0, 0]), np.array([0, 0.01, 0]))
    pre = preintegrate(samples, bias, NOISE, t_start=0.0)
    assert len(pre.samples) == 5
    np.testing.assert_array_equal(pre.bias_lin[0], bias[0])
    np.testing.assert_array_equal(pre.bias_lin[1], bias[1])
