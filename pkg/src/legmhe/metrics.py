"""Accuracy and timing summaries of an estimation run."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .rotation import euler_zyx, geodesic_distance, quat_to_rot, wrap_angle


@dataclass
class MetricsReport:
    ticks: int
    rmse_v: float            # body-frame velocity, norm of the error per tick
    rmse_v_axes: tuple
    rmse_euler: float        # roll and pitch
    rmse_yaw: float
    rmse_height: float
    max_attitude_error: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TimingReport:
    ticks: int
    mean_us: float
    p99_us: float
    max_us: float

    def to_dict(self) -> dict:
        return asdict(self)


def accuracy(estimates: list, truth: dict) -> MetricsReport:
    """Compare ``estimates`` (rows with ``t, p, v, q``) against truth records keyed by time.

    Only rows with a truth record at the same timestamp are scored.
    """
    dv, deul, dh, att = [], [], [], []
    for row in estimates:
        ref = truth.get(row.t)
        if ref is None:
            continue
        R_est = quat_to_rot(row.q)
        R_ref = quat_to_rot(ref.q)
        dv.append(R_est.T @ row.v - R_ref.T @ np.asarray(ref.v))
        deul.append(wrap_angle(euler_zyx(row.q) - euler_zyx(ref.q)))
        dh.append(row.p[2] - ref.p[2])
        att.append(geodesic_distance(row.q, ref.q))
    if not dv:
        nan = float("nan")
        return MetricsReport(0, nan, (nan, nan, nan), nan, nan, nan, nan)
    dv = np.array(dv)
    deul = np.array(deul)
    return MetricsReport(
        ticks=len(dv),
        rmse_v=float(np.sqrt(np.mean(np.sum(dv * dv, axis=1)))),
        rmse_v_axes=tuple(float(x) for x in np.sqrt(np.mean(dv * dv, axis=0))),
        rmse_euler=float(np.sqrt(np.mean(np.sum(deul[:, :2] ** 2, axis=1)))),
        rmse_yaw=float(np.sqrt(np.mean(deul[:, 2] ** 2))),
        rmse_height=float(np.sqrt(np.mean(np.square(dh)))),
        max_attitude_error=float(np.max(att)),
    )


def timing(seconds: list) -> TimingReport:
    if not seconds:
        return TimingReport(0, 0.0, 0.0, 0.0)
    us = np.asarray(seconds) * 1e6
    return TimingReport(len(us), float(us.mean()), float(np.percentile(us, 99)), float(us.max()))
