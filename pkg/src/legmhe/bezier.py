"""Piecewise cubic Bezier curves used to resample visual odometry."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FewerThanFourControlPoints, SampleTimeOutOfRange


@dataclass(frozen=True)
class BezierPath:
    """Cubic Bezier segments over ``3s + 1`` control points.

    Segment ``j`` uses control points ``3j .. 3j+3`` and is parameterized
    linearly in time between ``knot_times[3j]`` and ``knot_times[3j+3]``.
    Consecutive segments share their boundary point (C0 joins).  Inner knot
    times only label the control points; they do not reshape the curve.
    """

    control_points: np.ndarray
    knot_times: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.control_points, dtype=float))
        knots = np.asarray(self.knot_times, dtype=float).ravel()
        if pts.shape[0] != knots.shape[0]:
            raise ValueError("one knot time per control point is required")
        if pts.shape[0] < 4 or (pts.shape[0] - 1) % 3:
            raise FewerThanFourControlPoints(
                "need 3s+1 control points with s >= 1", count=pts.shape[0])
        if np.any(np.diff(knots) <= 0.0):
            raise ValueError("knot times must be strictly increasing")
        object.__setattr__(self, "control_points", pts)
        object.__setattr__(self, "knot_times", knots)

    @property
    def n_segments(self) -> int:
        return (self.control_points.shape[0] - 1) // 3


def _de_casteljau(p: np.ndarray, u: float) -> np.ndarray:
    a, b, c, d = p
    v = 1.0 - u
    ab, bc, cd = v * a + u * b, v * b + u * c, v * c + u * d
    abc, bcd = v * ab + u * bc, v * bc + u * cd
    return v * abc + u * bcd


def bezier_interpolate(path: BezierPath, sample_times) -> np.ndarray:
    """Evaluate ``path`` at ``sample_times``; returns an ``(n, 3)`` array.

    Differences of consecutive rows are the per-interval increments, so their
    sum telescopes to ``B(t_last) - B(t_first)``.
    """
    times = np.atleast_1d(np.asarray(sample_times, dtype=float))
    knots = path.knot_times
    bounds = knots[::3]
    out = np.empty((times.size, path.control_points.shape[1]))
    for i, t in enumerate(times):
        if t < knots[0] or t > knots[-1]:
            raise SampleTimeOutOfRange(t=t, span=(knots[0], knots[-1]))
        seg = min(int(np.searchsorted(bounds, t, side="right")) - 1, path.n_segments - 1)
        t0, t3 = bounds[seg], bounds[seg + 1]
        u = (t - t0) / (t3 - t0)
        out[i] = _de_casteljau(path.control_points[3 * seg: 3 * seg + 4], u)
    return out
