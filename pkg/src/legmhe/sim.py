"""Synthetic legged-robot trajectories and sensor streams with ground truth.

Trajectories are sampled on the IMU grid.  Each scenario prescribes a world
velocity profile and a body angular rate; acceleration is held constant over
each tick (``a_k = (v_{k+1} - v_k) / dt``) and attitude is integrated with the
same exponential map as the orientation filter.  This keeps the noise-free
streams exactly consistent with the estimator's process model.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigParse
from .legged import nearest_index
from .logio import (
    FORMAT_VERSION,
    ContactRecord,
    ImuRecord,
    LoRecord,
    SensorLog,
    TruthRecord,
    VoAbsRecord,
    VoIncRecord,
)
from .rotation import IDENTITY_QUAT, quat_conj, quat_exp, quat_from_euler_zyx, quat_mul, quat_to_rot, skew

GRAVITY = np.array([0.0, 0.0, -9.81])
SCENARIOS = ("hopper", "trot", "static")

# Hip offsets of a small quadruped in the body frame (FL, FR, RL, RR).
QUADRUPED_HIPS = np.array([[0.19, 0.13, 0.0], [0.19, -0.13, 0.0], [-0.19, 0.13, 0.0], [-0.19, -0.13, 0.0]])
TROT_PHASE = (0.0, 0.5, 0.5, 0.0)


@dataclass
class SimConfig:
    scenario: str = "trot"
    duration: float = 10.0
    imu_rate: float = 200.0
    vo_rate: float = 30.0
    vo_latency: float = 0.05
    seed: int = 0
    accel_noise: float = 0.02
    gyro_noise: float = 0.002
    accel_bias_walk: float = 1e-3
    gyro_bias_walk: float = 1e-4
    lo_pos_noise: float = 0.01
    lo_vel_noise: float = 0.05
    vo_trans_noise: float = 0.005
    vo_rot_noise: float = 0.002
    vo_abs_noise: float = 0.01
    accel_bias: tuple = (0.05, -0.04, 0.03)
    gyro_bias: tuple = (0.002, -0.001, 0.0015)
    initial_attitude: tuple = (0.02, -0.01, 0.3)   # roll, pitch, yaw
    speed: float = 0.4
    bob: float = 0.005
    wobble: float = 0.05
    gait_period: float = 0.5
    duty: float = 0.5
    body_height: float = 0.3
    clearance: float = 0.06
    flight_time: float = 0.4
    stance_time: float = 0.15
    hop_speed: float = 0.5
    leg_length: float = 0.5

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigParse("unknown scenario", scenario=self.scenario, allowed=SCENARIOS)
        if self.imu_rate <= 0 or self.vo_rate <= 0:
            raise ConfigParse("rates must be positive", imu_rate=self.imu_rate, vo_rate=self.vo_rate)
        if self.duration < 0 or self.vo_latency < 0:
            raise ConfigParse("duration and latency must be non-negative")
        if not 0.0 < self.duty <= 1.0:
            raise ConfigParse("duty must be in (0, 1]", duty=self.duty)

    def noiseless(self) -> "SimConfig":
        """Same trajectory with every noise channel and bias switched off."""
        zero = dict.fromkeys(("accel_noise", "gyro_noise", "accel_bias_walk", "gyro_bias_walk",
                              "lo_pos_noise", "lo_vel_noise", "vo_trans_noise", "vo_rot_noise",
                              "vo_abs_noise"), 0.0)
        return replace(self, accel_bias=(0.0, 0.0, 0.0), gyro_bias=(0.0, 0.0, 0.0), **zero)

    @property
    def n_feet(self) -> int:
        return 1 if self.scenario == "hopper" else 4

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration * self.imu_rate))


@dataclass
class TrueState:
    t: float
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    omega: np.ndarray      # body angular rate held over the following tick
    accel: np.ndarray      # world acceleration held over the following tick
    p_foot: np.ndarray
    v_foot: np.ndarray
    contact: tuple
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_omega: np.ndarray = field(default_factory=lambda: np.zeros(3))


# -- trajectory ---------------------------------------------------------------


def _ticks(n: int, rate: float) -> np.ndarray:
    return np.arange(n) / rate


def _hopper_profile(cfg: SimConfig, n: int, rng: np.random.Generator):
    """Vertical hops: ballistic flight, half-cosine stance; horizontal speed changes in stance."""
    dt = 1.0 / cfg.imu_rate
    n_flight = max(2, int(round(cfg.flight_time * cfg.imu_rate)))
    n_stance = max(2, int(round(cfg.stance_time * cfg.imu_rate)))
    cycle = n_flight + n_stance
    tf, ts = n_flight * dt, n_stance * dt
    v0 = 0.5 * 9.81 * tf
    n_cycles = (n + 1) // cycle + 2
    targets = np.column_stack([cfg.hop_speed * (0.5 + 0.5 * rng.random(n_cycles + 1)),
                               0.2 * cfg.hop_speed * (2.0 * rng.random(n_cycles + 1) - 1.0)])
    k = np.arange(n + 1)
    c, phase = np.divmod(k, cycle)
    v = np.zeros((n + 1, 3))
    stance = phase >= n_flight
    tau = np.where(stance, (phase - n_flight) * dt, phase * dt)
    v[:, 2] = np.where(stance, -v0 * np.cos(np.pi * tau / ts), v0 - 9.81 * tau)
    blend = np.where(stance, 0.5 * (1.0 - np.cos(np.pi * tau / ts)), 0.0)
    v[:, :2] = targets[c] + blend[:, None] * (targets[c + 1] - targets[c])
    w = 2.0 * np.pi / (cycle * dt)
    t = k * dt
    omega = cfg.wobble * w * np.column_stack([np.cos(w * t), np.sin(1.3 * w * t), 0.5 * np.cos(0.7 * w * t)])
    contact = stance[:, None]
    return v, omega, contact, (n_flight, n_stance)


def _trot_profile(cfg: SimConfig, n: int):
    dt = 1.0 / cfg.imu_rate
    period = max(2, int(round(cfg.gait_period * cfg.imu_rate)))
    k = np.arange(n + 1)
    t = k * dt
    w = 2.0 * np.pi / (period * dt)
    v = np.zeros((n + 1, 3))
    v[:, 0] = cfg.speed
    v[:, 2] = cfg.bob * 2.0 * w * np.cos(2.0 * w * t)
    omega = cfg.wobble * w * np.column_stack([np.cos(w * t), 0.7 * np.sin(w * t + 1.0), 0.3 * np.cos(0.5 * w * t)])
    stance_len = int(round(cfg.duty * period))
    offsets = [int(round(ph * period)) for ph in TROT_PHASE]
    contact = np.column_stack([((k + off) % period) < stance_len for off in offsets])
    return v, omega, contact, (period, stance_len, offsets)


def _swing(start: np.ndarray, end: np.ndarray, s: float, clearance: float, duration: float):
    """Foot position and velocity along a swing arc at fraction ``s``."""
    smooth = s * s * (3.0 - 2.0 * s)
    dsmooth = 6.0 * s * (1.0 - s) / duration
    pos = start + (end - start) * smooth
    vel = (end - start) * dsmooth
    pos[2] = clearance * np.sin(np.pi * s)
    vel[2] = clearance * np.pi * np.cos(np.pi * s) / duration
    return pos, vel


def _runs(flags: np.ndarray) -> list:
    """``(start, stop)`` tick ranges of consecutive true entries."""
    edges = np.flatnonzero(np.diff(np.concatenate([[0], flags.astype(int), [0]])))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def _feet_from_contacts(contact: np.ndarray, anchor, clearance: float, dt: float):
    """Foot tracks: fixed during stance runs, swing arcs between them.

    ``anchor(foot, k)`` gives the ground point of a stance run starting at
    tick ``k`` (and the lift-off point of a swing that starts the record).
    """
    n, nf = contact.shape
    pos = np.zeros((n, nf, 3))
    vel = np.zeros((n, nf, 3))
    for f in range(nf):
        stance = _runs(contact[:, f])
        spots = [anchor(f, a) for a, _ in stance]
        for (a, b), spot in zip(stance, spots):
            pos[a:b, f] = spot
        swings = _runs(~contact[:, f])
        for g0, g1 in swings:
            before = [i for i, (_, b) in enumerate(stance) if b == g0]
            after = [i for i, (a, _) in enumerate(stance) if a == g1]
            start = spots[before[0]] if before else anchor(f, g0)
            end = spots[after[0]] if after else start
            for k in range(g0, g1):
                pos[k, f], vel[k, f] = _swing(start, end, (k - g0) / (g1 - g0), clearance, (g1 - g0) * dt)
    return pos, vel


def generate_trajectory(cfg: SimConfig) -> list:
    """Ground-truth states at every IMU tick (biases are filled in by :func:`synthesize_sensors`)."""
    n = cfg.n_ticks
    if n == 0:
        return []
    dt = 1.0 / cfg.imu_rate
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    q0 = quat_from_euler_zyx(*cfg.initial_attitude)
    if cfg.scenario == "static":
        v = np.zeros((n + 1, 3))
        omega = np.zeros((n + 1, 3))
        contact = np.ones((n + 1, 4), bool)
        p0 = np.array([0.0, 0.0, cfg.body_height])
    elif cfg.scenario == "trot":
        v, omega, contact, _ = _trot_profile(cfg, n)
        p0 = np.array([0.0, 0.0, cfg.body_height])
    else:
        v, omega, contact, _ = _hopper_profile(cfg, n, rng)
        p0 = np.array([0.0, 0.0, cfg.leg_length])

    acc = np.diff(v, axis=0) / dt
    p = np.zeros((n, 3))
    q = np.zeros((n, 4))
    p[0], q[0] = p0, q0
    for k in range(n - 1):
        p[k + 1] = p[k] + v[k] * dt + 0.5 * acc[k] * dt * dt
        q[k + 1] = quat_mul(q[k], quat_exp(omega[k], dt))

    contact = contact[:n]
    if cfg.scenario == "hopper":
        def anchor(f, k):
            return np.array([p[k, 0], p[k, 1], 0.0])
    else:
        def anchor(f, k):
            hip = quat_to_rot(q[k]) @ QUADRUPED_HIPS[f]
            return np.array([p[k, 0] + hip[0], p[k, 1] + hip[1], 0.0])
    feet, feet_v = _feet_from_contacts(contact, anchor, cfg.clearance, dt)

    times = _ticks(n, cfg.imu_rate)
    return [TrueState(times[k], p[k].copy(), v[k].copy(), q[k].copy(), omega[k].copy(), acc[k].copy(),
                      feet[k].copy(), feet_v[k].copy(), tuple(bool(c) for c in contact[k]))
            for k in range(n)]


# -- sensors ------------------------------------------------------------------


def _streams(seed: int):
    children = np.random.SeedSequence([seed, 1]).spawn(4)
    return [np.random.default_rng(c) for c in children]


def synthesize_sensors(traj: list, cfg: SimConfig) -> SensorLog:
    """IMU, contact, leg odometry, VO and truth records for ``traj``."""
    n = len(traj)
    nf = cfg.n_feet
    dt = 1.0 / cfg.imu_rate
    rng_bias, rng_imu, rng_lo, rng_vo = _streams(cfg.seed)
    records = []

    b_a = np.array(cfg.accel_bias, dtype=float)
    b_w = np.array(cfg.gyro_bias, dtype=float)
    for k, st in enumerate(traj):
        st.b_a, st.b_omega = b_a.copy(), b_w.copy()
        R = quat_to_rot(st.q)
        accel = R.T @ (st.accel - GRAVITY) + b_a + cfg.accel_noise * rng_imu.standard_normal(3)
        gyro = st.omega + b_w + cfg.gyro_noise * rng_imu.standard_normal(3)
        records.append(ImuRecord(st.t, tuple(gyro), tuple(accel)))
        records.append(ContactRecord(st.t, st.contact))
        for f in range(nf):
            rel = R.T @ (st.p_foot[f] - st.p)
            rel_dot = R.T @ (st.v_foot[f] - st.v) - skew(st.omega) @ rel
            fk = rel + cfg.lo_pos_noise * rng_lo.standard_normal(3)
            fk_dot = rel_dot + cfg.lo_vel_noise * rng_lo.standard_normal(3)
            records.append(LoRecord(st.t, f, tuple(fk), tuple(fk_dot)))
        records.append(TruthRecord(st.t, tuple(st.p), tuple(st.v), tuple(st.q), tuple(st.p_foot.ravel()),
                                   tuple(b_a), tuple(b_w)))
        b_a = b_a + cfg.accel_bias_walk * np.sqrt(dt) * rng_bias.standard_normal(3)
        b_w = b_w + cfg.gyro_bias_walk * np.sqrt(dt) * rng_bias.standard_normal(3)

    if n:
        times = np.array([st.t for st in traj])
        n_frames = int(np.ceil(cfg.duration * cfg.vo_rate - 1e-9))
        frames = [(j / cfg.vo_rate, nearest_index(times, j / cfg.vo_rate)) for j in range(n_frames)]
        for j, (t_c, k) in enumerate(frames):
            st = traj[k]
            q_abs = quat_mul(quat_exp(cfg.vo_abs_noise * rng_vo.standard_normal(3)), st.q)
            records.append(VoAbsRecord(t_c + cfg.vo_latency, t_c, tuple(q_abs)))
            if j == 0:
                continue
            t_prev, k_prev = frames[j - 1]
            prev = traj[k_prev]
            trans = quat_to_rot(prev.q).T @ (st.p - prev.p) + cfg.vo_trans_noise * rng_vo.standard_normal(3)
            rot = quat_mul(quat_mul(quat_conj(prev.q), st.q), quat_exp(cfg.vo_rot_noise * rng_vo.standard_normal(3)))
            records.append(VoIncRecord(t_c + cfg.vo_latency, t_prev, t_c, tuple(trans), tuple(rot)))

    header = {
        "version": FORMAT_VERSION,
        "scenario": cfg.scenario,
        "imu_rate": cfg.imu_rate,
        "vo_rate": cfg.vo_rate,
        "vo_latency": cfg.vo_latency,
        "seed": cfg.seed,
        "duration": cfg.duration,
        "n_feet": nf,
        "initial": _initial_header(traj, nf, cfg),
        "sim": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()},
    }
    return SensorLog(header, records).sorted()


def _initial_header(traj: list, nf: int, cfg: SimConfig) -> dict:
    if not traj:
        return {"p": [0.0] * 3, "v": [0.0] * 3, "q": list(IDENTITY_QUAT), "p_foot": [0.0] * (3 * nf)}
    st = traj[0]
    return {"p": st.p.tolist(), "v": st.v.tolist(), "q": st.q.tolist(), "p_foot": st.p_foot.ravel().tolist()}


def simulate(cfg: SimConfig) -> SensorLog:
    return synthesize_sensors(generate_trajectory(cfg), cfg)
