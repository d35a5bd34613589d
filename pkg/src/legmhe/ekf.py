"""Iterated error-state EKF for base orientation and gyroscope bias.

The error state is ``[dtheta, db]`` with ``R = Exp(dtheta) R_hat`` (a
world-frame rotation error) and ``b = b_hat + db``.  Keeping the rotation
error in the world frame makes the gravity measurement blind to the third
component exactly, so gravity updates are applied as consider updates that
never move yaw.

Delayed VO orientation fixes are handled by :class:`EkfHistoryBuffer`: the
fix is applied at the buffered node nearest its timestamp and the later IMU
samples are re-applied from there.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AccelGateRejected,
    FreeFallSample,
    HighDynamicsSample,
    NonPositiveDt,
    VoTimestampTooOld,
)
from .noise import NoiseConfig
from .rotation import IDENTITY_QUAT, quat_conj, quat_exp, quat_log, quat_mul, quat_to_rot, right_jacobian, skew

log = logging.getLogger(__name__)

GRAVITY = 9.81
FREE_FALL_RATIO = 0.1
HIGH_DYNAMICS_RATIO = 3.0
ITERATION_TOL = 1e-10


@dataclass
class OrientationState:
    q: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    b_omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    P: np.ndarray = field(default_factory=lambda: 1e-4 * np.eye(6))

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.b_omega = np.asarray(self.b_omega, dtype=float)
        self.P = np.asarray(self.P, dtype=float)

    def copy(self) -> "OrientationState":
        return OrientationState(self.q.copy(), self.b_omega.copy(), self.P.copy())

    @property
    def R(self) -> np.ndarray:
        return quat_to_rot(self.q)


def _sym(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _retract(q0: np.ndarray, b0: np.ndarray, delta: np.ndarray):
    """Apply a world-frame rotation error and a bias error to a reference."""
    return quat_mul(quat_exp(delta[:3]), q0), b0 + delta[3:]


def _rotation_offset(q: np.ndarray, q0: np.ndarray) -> np.ndarray:
    """World-frame rotation vector taking ``q0`` to ``q``."""
    return quat_log(quat_mul(q, quat_conj(q0)))


def ekf_predict(state: OrientationState, omega_meas, dt: float, Q_omega, Q_b_omega) -> OrientationState:
    """Propagate through one gyro sample held over ``dt`` seconds."""
    if not dt > 0.0:
        raise NonPositiveDt(dt=dt)
    phi = (np.asarray(omega_meas, dtype=float) - state.b_omega) * dt
    q = quat_mul(state.q, quat_exp(phi))
    coupling = -quat_to_rot(q) @ right_jacobian(phi) * dt
    F = np.eye(6)
    F[:3, 3:] = coupling
    Qd = np.zeros((6, 6))
    Qd[:3, :3] = coupling @ np.asarray(Q_omega) @ coupling.T
    Qd[3:, 3:] = np.asarray(Q_b_omega) * dt
    P = _sym(F @ state.P @ F.T + Qd)
    return OrientationState(q, state.b_omega.copy(), P)


def _iterated_update(state: OrientationState, residual_and_jacobian, R_meas: np.ndarray,
                     iterations: int, frozen: tuple = ()) -> OrientationState:
    """Gauss-Newton iterated update around ``state``.

    ``residual_and_jacobian(q, b)`` returns the innovation and its Jacobian
    with respect to the error state at ``(q, b)``.  Gain rows listed in
    ``frozen`` are zeroed (consider update); the Joseph form keeps the
    covariance consistent with that choice.
    """
    q0, b0, P0 = state.q, state.b_omega, state.P
    q, b = q0, b0
    H = None
    for _ in range(max(1, iterations)):
        r, H = residual_and_jacobian(q, b)
        offset = np.concatenate([_rotation_offset(q, q0), b - b0])
        S = H @ P0 @ H.T + R_meas
        K = np.linalg.solve(S, H @ P0).T
        if frozen:
            K[list(frozen)] = 0.0
        delta = K @ (r + H @ offset)
        q_new, b_new = _retract(q0, b0, delta)
        change = np.linalg.norm(np.concatenate([_rotation_offset(q_new, q), b_new - b]))
        q, b = q_new, b_new
        if change < ITERATION_TOL:
            break
    r, H = residual_and_jacobian(q, b)
    IKH = np.eye(6) - K @ H
    P = _sym(IKH @ P0 @ IKH.T + K @ R_meas @ K.T)
    return OrientationState(q, b, P)


def gravity_gate(accel_meas, gravity: float = GRAVITY) -> float:
    """Return ``|a| / g`` or raise when the sample cannot be used as a tilt reference."""
    ratio = float(np.linalg.norm(accel_meas)) / gravity
    if ratio < FREE_FALL_RATIO:
        raise FreeFallSample(ratio=ratio)
    if ratio > HIGH_DYNAMICS_RATIO:
        raise HighDynamicsSample(ratio=ratio)
    return ratio


def ekf_update_gravity(state: OrientationState, accel_meas, Q_a, iterations: int = 3,
                       gravity: float = GRAVITY) -> OrientationState:
    """Tilt correction from the specific force measured at rest-like instants.

    The innovation covariance is ``kappa^2 Q_a`` with ``kappa = |a| / g``.
    Yaw (the world z component of the rotation error) is held fixed.
    """
    accel = np.asarray(accel_meas, dtype=float)
    kappa = gravity_gate(accel, gravity)
    up = np.array([0.0, 0.0, gravity])
    up_skew = skew(up)

    def residual(q, b):
        Rt = quat_to_rot(q).T
        H = np.zeros((3, 6))
        H[:, :3] = Rt @ up_skew
        return accel - Rt @ up, H

    return _iterated_update(state, residual, kappa * kappa * np.asarray(Q_a), iterations, frozen=(2,))


def ekf_update_vo_orientation(state: OrientationState, q_vo, Q_yqc, iterations: int = 3) -> OrientationState:
    """Correct the attitude with an absolute orientation fix ``q_vo``."""
    q_vo = np.asarray(q_vo, dtype=float)
    if np.dot(q_vo, state.q) < 0.0:
        q_vo = -q_vo
    H = np.zeros((3, 6))
    H[:, :3] = np.eye(3)

    def residual(q, b):
        return _rotation_offset(q_vo, q), H

    return _iterated_update(state, residual, np.asarray(Q_yqc), iterations)


def _gravity_or_skip(state: OrientationState, accel, noise: NoiseConfig) -> tuple[OrientationState, bool]:
    try:
        return ekf_update_gravity(state, accel, noise.Q_a, noise.ekf_iterations, noise.gravity), True
    except AccelGateRejected:
        return state, False


@dataclass
class BufferEntry:
    t: float
    gyro: np.ndarray
    accel: np.ndarray
    state: OrientationState
    gravity_used: bool = True


class EkfHistoryBuffer:
    """Bounded history of IMU samples and the posteriors they produced."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.entries: deque = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, entry: BufferEntry) -> None:
        if self.entries and entry.t <= self.entries[-1].t:
            raise ValueError("buffer timestamps must increase")
        self.entries.append(entry)

    @property
    def head(self) -> BufferEntry:
        return self.entries[-1]

    @property
    def tail(self) -> BufferEntry:
        return self.entries[0]

    def nearest(self, t: float) -> int:
        """Index of the entry closest to ``t``; ties go to the earlier entry."""
        times = np.fromiter((e.t for e in self.entries), float, len(self.entries))
        return int(np.argmin(np.abs(times - t)))


def ekf_replay(buffer: EkfHistoryBuffer, vo_time: float, q_vo, noise: NoiseConfig) -> int:
    """Apply a delayed orientation fix and re-run the later samples.

    Returns the buffer index where the fix was applied; every stored posterior
    from there on is overwritten.
    """
    if not buffer.entries:
        raise VoTimestampTooOld("buffer is empty", vo_time=vo_time)
    half = 0.5 / noise.rate
    if vo_time < buffer.tail.t - half:
        raise VoTimestampTooOld(vo_time=vo_time, tail=buffer.tail.t)
    start = buffer.nearest(vo_time)
    entries = buffer.entries
    first = entries[start]
    first.state = ekf_update_vo_orientation(first.state, q_vo, noise.Q_yqc, noise.ekf_iterations)
    for i in range(start + 1, len(entries)):
        prev, cur = entries[i - 1], entries[i]
        st = ekf_predict(prev.state, prev.gyro, cur.t - prev.t, noise.Q_omega, noise.Q_bomega)
        cur.state, cur.gravity_used = _gravity_or_skip(st, cur.accel, noise)
    return start


class OrientationFilter:
    """Streaming wrapper: one :meth:`step` per IMU sample, delayed VO via :meth:`apply_vo`."""

    def __init__(self, initial: OrientationState, noise: NoiseConfig, capacity: int | None = None):
        self.noise = noise
        self.initial = initial.copy()
        self.buffer = EkfHistoryBuffer(capacity or max(8, int(round(2.0 * noise.rate))))
        self.skipped_gravity = 0
        self.dropped_vo = 0

    @property
    def state(self) -> OrientationState:
        return self.buffer.head.state if self.buffer.entries else self.initial

    def step(self, t: float, gyro, accel) -> OrientationState:
        gyro = np.asarray(gyro, dtype=float)
        accel = np.asarray(accel, dtype=float)
        if self.buffer.entries:
            head = self.buffer.head
            st = ekf_predict(head.state, head.gyro, t - head.t, self.noise.Q_omega, self.noise.Q_bomega)
        else:
            st = self.initial.copy()
        st, used = _gravity_or_skip(st, accel, self.noise)
        if not used:
            self.skipped_gravity += 1
        self.buffer.append(BufferEntry(t, gyro, accel, st, used))
        return st

    def apply_vo(self, vo_time: float, q_vo) -> list:
        """Apply a delayed fix; returns the timestamps whose posteriors changed."""
        try:
            start = ekf_replay(self.buffer, vo_time, q_vo, self.noise)
        except VoTimestampTooOld as exc:
            self.dropped_vo += 1
            log.warning("dropping VO orientation: %s", exc)
            return []
        return [e.t for e in list(self.buffer.entries)[start:]]

    def state_at(self, t: float) -> OrientationState:
        return self.buffer.entries[self.buffer.nearest(t)].state
