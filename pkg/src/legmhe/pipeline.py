"""Run the orientation filter and the moving-horizon estimator over a sensor log."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ekf import OrientationFilter, OrientationState
from .errors import LegMheError, LogParse, SolverFailure, VoGapExceedsWindow
from .fif import fif_problem, relative_deviation, solve_fif_vector
from .legged import LegSample, MheState, MovingHorizonEstimator, VoIncrement, WindowNode
from .logio import ContactRecord, ImuRecord, LoRecord, SensorLog, TruthRecord, VoAbsRecord, VoIncRecord
from .metrics import MetricsReport, TimingReport, accuracy, timing
from .noise import NoiseConfig

log = logging.getLogger(__name__)


@dataclass
class EstimateRow:
    t: float
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    p_foot: np.ndarray
    b_a: np.ndarray


@dataclass
class RunResult:
    rows: list
    metrics: MetricsReport
    timing: TimingReport
    solve_seconds: list
    fif_deviation: float | None = None
    fif_checks: int = 0
    counters: dict = field(default_factory=dict)


def config_for_log(cfg: NoiseConfig, log_: SensorLog) -> NoiseConfig:
    """The estimator runs at the log's IMU rate."""
    rate = float(log_.header.get("imu_rate", cfg.rate))
    return cfg if rate == cfg.rate else cfg.with_changes(rate=rate)


def initial_states(log_: SensorLog, cfg: NoiseConfig) -> tuple[MheState, OrientationState]:
    init = log_.header.get("initial")
    n_feet = int(log_.header.get("n_feet", 0))
    if init is None:
        raise LogParse("header lacks the initial state", line=1)
    x0 = MheState(np.array(init["p"], float), np.array(init["v"], float),
                  np.array(init["p_foot"], float).reshape(n_feet, 3), np.zeros(3))
    P = np.zeros((6, 6))
    P[:3, :3] = cfg.P_att
    P[3:, 3:] = cfg.P_bomega
    return x0, OrientationState(np.array(init["q"], float), np.zeros(3), P)


class _Tick:
    def __init__(self, t: float):
        self.t = t
        self.imu: ImuRecord | None = None
        self.contact: tuple | None = None
        self.lo: dict = {}


def run_estimator(log_: SensorLog, cfg: NoiseConfig, use_vo: bool = True,
                  fif_every: int | None = None, max_ticks: int | None = None,
                  arrival_hook: Callable | None = None, on_solve: Callable | None = None) -> RunResult:
    """Estimate every IMU tick of ``log_``.

    With ``fif_every`` the window estimate is compared to the full-history
    solution every that many ticks (and at the last tick).  ``arrival_hook``
    is called with the estimator after each tick's window shift; tests use it
    to tamper with the arrival cost.  ``on_solve(estimator, solution)`` sees
    every window solution.
    """
    cfg = config_for_log(cfg, log_)
    n_feet = int(log_.header.get("n_feet", 0))
    x0, q0 = initial_states(log_, cfg)
    ekf = OrientationFilter(q0, cfg)
    mhe = MovingHorizonEstimator(cfg, x0, keep_archive=fif_every is not None)
    rows, solve_s = [], []
    pending_vo: list = []
    truth = {}
    fif_dev, fif_checks = 0.0, 0
    counters = {"vo_rejected": 0, "vo_applied": 0}
    tick_index = 0
    current: _Tick | None = None

    def attach_ready() -> None:
        newest = mhe.nodes[-1].t if mhe.nodes else -np.inf
        half = 0.5 * cfg.dt
        while pending_vo and pending_vo[0].t_j <= newest + half:
            inc = pending_vo.pop(0)
            try:
                mhe.attach_vo(inc, lambda t: ekf.state_at(t).R)
                counters["vo_applied"] += 1
            except VoGapExceedsWindow as exc:
                counters["vo_rejected"] += 1
                log.info("VO increment dropped: %s", exc)

    def flush() -> None:
        nonlocal current, tick_index, fif_dev, fif_checks
        tk = current
        current = None
        if tk is None:
            return
        if tk.imu is None:
            raise LogParse("tick without IMU record", t=tk.t)
        st = ekf.step(tk.t, tk.imu.gyro, tk.imu.accel)
        contact = tk.contact if tk.contact is not None else (False,) * n_feet
        node = WindowNode(tick_index, tk.t, st.R, st.b_omega.copy(), np.array(tk.imu.accel),
                          np.array(tk.imu.gyro), tuple(contact), dict(tk.lo))
        started = time.perf_counter()
        mhe.append(node)
        attach_ready()
        if arrival_hook is not None:
            arrival_hook(mhe)
        try:
            sol = mhe.solve()
        except LegMheError as exc:
            raise SolverFailure(str(exc), tick=tick_index, cause=exc.kind) from exc
        solve_s.append(time.perf_counter() - started)
        if on_solve is not None:
            on_solve(mhe, sol)
        est = mhe.last_estimate
        rows.append(EstimateRow(tk.t, est.p, est.v, ekf.state.q.copy(), est.p_foot, est.b_a))
        if fif_every is not None and (tick_index % fif_every == 0):
            fif_dev = max(fif_dev, _fif_check(mhe, sol.latest))
            fif_checks += 1
        tick_index += 1

    for rec in log_.records:
        if max_ticks is not None and tick_index >= max_ticks and current is None:
            break
        if current is not None and (rec.t > current.t or isinstance(rec, (VoAbsRecord, VoIncRecord))):
            flush()
            if max_ticks is not None and tick_index >= max_ticks:
                break
        if isinstance(rec, VoAbsRecord):
            if use_vo:
                changed = ekf.apply_vo(rec.t_c, np.array(rec.q))
                if changed:
                    mhe.refresh_orientation(lambda t: (ekf.state_at(t).R, ekf.state_at(t).b_omega),
                                            since=changed[0])
            continue
        if isinstance(rec, VoIncRecord):
            if use_vo:
                pending_vo.append(VoIncrement(rec.t_i, rec.t_j, np.array(rec.translation), np.array(rec.rotation)))
                if mhe.nodes:
                    attach_ready()
            continue
        if current is None:
            current = _Tick(rec.t)
        if isinstance(rec, ImuRecord):
            current.imu = rec
        elif isinstance(rec, ContactRecord):
            current.contact = rec.flags
        elif isinstance(rec, LoRecord):
            current.lo[rec.foot] = LegSample(np.array(rec.fk), np.array(rec.fk_dot))
        elif isinstance(rec, TruthRecord):
            truth[rec.t] = rec
    if current is not None and (max_ticks is None or tick_index < max_ticks):
        flush()

    if fif_every is not None and rows and (tick_index - 1) % fif_every:
        # trailing VO fixes may have refreshed the window since the last solve
        fif_dev = max(fif_dev, _fif_check(mhe, mhe.horizon.solve().latest))
        fif_checks += 1
    counters["gravity_skipped"] = ekf.skipped_gravity
    counters["vo_abs_dropped"] = ekf.dropped_vo
    return RunResult(rows, accuracy(rows, truth), timing(solve_s), solve_s,
                     fif_dev if fif_every is not None else None, fif_checks, counters)


def _fif_check(mhe: MovingHorizonEstimator, x_window: np.ndarray) -> float:
    full = solve_fif_vector(fif_problem(mhe))
    return relative_deviation(x_window, full[-1])


def trace_csv(rows: list, n_feet: int) -> str:
    cols = ["t", "px", "py", "pz", "vx", "vy", "vz", "qx", "qy", "qz", "qw"]
    cols += [f"foot{f}_{a}" for f in range(n_feet) for a in "xyz"]
    cols += ["bax", "bay", "baz"]
    out = [",".join(cols)]
    for r in rows:
        vals = [r.t, *r.p, *r.v, *r.q, *np.asarray(r.p_foot).ravel(), *r.b_a]
        out.append(",".join(repr(float(v)) for v in vals))
    return "\n".join(out) + "\n"
