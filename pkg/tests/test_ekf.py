import numpy as np
import pytest
from hypothesis import given
from scipy.integrate import solve_ivp

from legmhe.ekf import (
    BufferEntry,
    EkfHistoryBuffer,
    OrientationFilter,
    OrientationState,
    ekf_predict,
    ekf_replay,
    ekf_update_gravity,
    ekf_update_vo_orientation,
    gravity_gate,
)
from legmhe.errors import FreeFallSample, HighDynamicsSample, NonPositiveDt, VoTimestampTooOld
from legmhe.noise import NoiseConfig
from legmhe.rotation import euler_zyx, quat_conj, quat_exp, quat_log, quat_mul, quat_to_rot, rot_to_quat

from strategies import random_quat, seeds

NOISE = NoiseConfig()
ZERO3 = np.zeros(3)
REST = np.array([0.0, 0.0, 9.81])


def test_zero_rate_keeps_attitude_and_grows_bias_variance():
    st0 = OrientationState()
    out = ekf_predict(st0, ZERO3, 0.01, NOISE.Q_omega, NOISE.Q_bomega)
    np.testing.assert_array_equal(out.q, st0.q)
    np.testing.assert_allclose(out.P[3:, 3:], st0.P[3:, 3:] + NOISE.Q_bomega * 0.01)


def test_constant_yaw_rate():
    out = ekf_predict(OrientationState(), [0.0, 0.0, 1.0], 0.5, NOISE.Q_omega, NOISE.Q_bomega)
    np.testing.assert_allclose(out.q, [0.0, 0.0, np.sin(0.25), np.cos(0.25)], atol=1e-15)


def test_bias_is_subtracted():
    st0 = OrientationState(b_omega=np.array([0.3, -0.1, 0.2]))
    out = ekf_predict(st0, [0.3, -0.1, 0.2], 0.1, NOISE.Q_omega, NOISE.Q_bomega)
    np.testing.assert_allclose(out.q, st0.q, atol=1e-15)


def test_nonpositive_dt():
    with pytest.raises(NonPositiveDt):
        ekf_predict(OrientationState(), ZERO3, 0.0, NOISE.Q_omega, NOISE.Q_bomega)


def test_predict_matches_fine_integration(rng):
    """Held gyro samples integrated as a matrix ODE."""
    q = random_quat(rng)
    state = OrientationState(q=q)
    R = quat_to_rot(q)
    dt = 0.01
    for _ in range(50):
        omega = rng.normal(0, 2.0, 3)
        state = ekf_predict(state, omega, dt, NOISE.Q_omega, NOISE.Q_bomega)
        W = np.array([[0, -omega[2], omega[1]], [omega[2], 0, -omega[0]], [-omega[1], omega[0], 0]])
        sol = solve_ivp(lambda _, y: (y.reshape(3, 3) @ W).ravel(), (0, dt), R.ravel(),
                        rtol=1e-11, atol=1e-12)
        R = sol.y[:, -1].reshape(3, 3)
    assert np.abs(quat_to_rot(state.q) - R).max() < 1e-4


def world_yaw_change(q_new, q_old):
    return abs(quat_log(quat_mul(q_new, quat_conj(q_old)))[2])


def test_gravity_update_never_moves_yaw(rng):
    for _ in range(100):
        q = random_quat(rng)
        A = rng.standard_normal((6, 6))
        state = OrientationState(q=q, P=A @ A.T * 0.01 + 1e-4 * np.eye(6))
        accel = REST + rng.normal(0, 2.0, 3)
        out = ekf_update_gravity(state, accel, NOISE.Q_a)
        assert world_yaw_change(out.q, q) < 1e-12


def test_static_roll_error_converges():
    filt = OrientationFilter(OrientationState(q=quat_exp([0.1, 0.0, 0.0]),
                                              P=np.diag([0.02, 0.02, 0.02, 0.005, 0.005, 0.005]) ** 2),
                             NOISE)
    for k in range(100):
        filt.step(k * NOISE.dt, ZERO3, REST)
    assert abs(euler_zyx(filt.state.q)[0]) < 1e-3


def test_gravity_gate():
    assert gravity_gate(REST) == pytest.approx(1.0)
    with pytest.raises(FreeFallSample):
        gravity_gate([0.0, 0.0, 0.5])
    with pytest.raises(HighDynamicsSample):
        gravity_gate([0.0, 0.0, 40.0])


def test_free_fall_skips_gravity():
    filt = OrientationFilter(OrientationState(), NOISE)
    filt.step(0.0, ZERO3, ZERO3)
    filt.step(NOISE.dt, ZERO3, REST)
    assert filt.skipped_gravity == 1
    assert not filt.buffer.tail.gravity_used


def test_vo_update_at_estimate_changes_nothing(rng):
    q = random_quat(rng)
    out = ekf_update_vo_orientation(OrientationState(q=q), q, NOISE.Q_yqc)
    np.testing.assert_allclose(out.q, q, atol=1e-15)


def test_vo_update_sign_invariant(rng):
    state = OrientationState(q=random_quat(rng), P=1e-2 * np.eye(6))
    fix = quat_mul(quat_exp(rng.normal(0, 0.1, 3)), state.q)
    a = ekf_update_vo_orientation(state, fix, NOISE.Q_yqc)
    b = ekf_update_vo_orientation(state, -fix, NOISE.Q_yqc)
    np.testing.assert_allclose(a.q, b.q, atol=1e-14)


def test_confident_vo_pulls_to_fix(rng):
    state = OrientationState(q=random_quat(rng), P=np.eye(6))
    fix = quat_mul(quat_exp([0.05, -0.02, 0.03]), state.q)
    out = ekf_update_vo_orientation(state, fix, 1e-10 * np.eye(3))
    assert abs(abs(np.dot(out.q, fix)) - 1.0) < 1e-9


def imu_stream(rng, n):
    gyro = rng.normal(0, 0.3, (n, 3))
    accel = REST + rng.normal(0, 0.3, (n, 3))
    return [(k * NOISE.dt, gyro[k], accel[k]) for k in range(n)]


def test_delayed_fix_replays_bit_identically(rng):
    stream = imu_stream(rng, 60)
    fix_tick = 30
    fix = quat_exp([0.02, -0.01, 0.05])

    in_order = OrientationFilter(OrientationState(), NOISE)
    for k, sample in enumerate(stream):
        in_order.step(*sample)
        if k == fix_tick:
            in_order.apply_vo(stream[fix_tick][0], fix)

    delayed = OrientationFilter(OrientationState(), NOISE)
    for k, sample in enumerate(stream):
        delayed.step(*sample)
        if k == fix_tick + 20:
            changed = delayed.apply_vo(stream[fix_tick][0], fix)
            assert changed[0] == stream[fix_tick][0]

    for a, b in zip(in_order.buffer.entries, delayed.buffer.entries):
        assert a.state.q.tobytes() == b.state.q.tobytes()
        assert a.state.P.tobytes() == b.state.P.tobytes()


def test_fix_older_than_buffer(rng):
    filt = OrientationFilter(OrientationState(), NOISE, capacity=8)
    for sample in imu_stream(rng, 20):
        filt.step(*sample)
    assert filt.apply_vo(0.0, np.array([0.0, 0.0, 0.0, 1.0])) == []
    assert filt.dropped_vo == 1
    with pytest.raises(VoTimestampTooOld):
        ekf_replay(filt.buffer, 0.0, np.array([0.0, 0.0, 0.0, 1.0]), NOISE)


def test_nearest_tie_goes_earlier():
    buf = EkfHistoryBuffer(4)
    for t in (0.0, 1.0, 2.0):
        buf.append(BufferEntry(t, ZERO3, REST, OrientationState()))
    assert buf.nearest(0.5) == 0
    assert buf.nearest(1.6) == 2
    with pytest.raises(ValueError):
        buf.append(BufferEntry(2.0, ZERO3, REST, OrientationState()))


@given(seeds)
def test_covariance_stays_psd(seed):
    rng = np.random.default_rng(seed)
    filt = OrientationFilter(OrientationState(q=random_quat(rng)), NOISE)
    for sample in imu_stream(rng, 40):
        state = filt.step(*sample)
        assert np.array_equal(state.P, state.P.T)
        assert np.linalg.eigvalsh(state.P).min() >= -1e-15


def test_state_at_uses_nearest_entry(rng):
    filt = OrientationFilter(OrientationState(), NOISE)
    for sample in imu_stream(rng, 5):
        filt.step(*sample)
    assert filt.state_at(2.2 * NOISE.dt) is filt.buffer.entries[2].state
    np.testing.assert_allclose(filt.state.R, quat_to_rot(filt.state.q))
    assert np.allclose(quat_to_rot(rot_to_quat(filt.state.R)), filt.state.R)
