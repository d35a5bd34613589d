import numpy as np
import pytest

from legmhe.logio import TruthRecord
from legmhe.metrics import accuracy, timing
from legmhe.pipeline import EstimateRow
from legmhe.rotation import quat_exp, quat_mul


def truth(t, v, q):
    return TruthRecord(t, (0.0, 0.0, 1.0), tuple(v), tuple(q), (), (0.0,) * 3, (0.0,) * 3)


def row(t, v, q, z=1.0):
    return EstimateRow(t, np.array([0.0, 0.0, z]), np.array(v, float), np.array(q, float), np.zeros((0, 3)),
                       np.zeros(3))


def test_perfect_estimate_scores_zero():
    q = quat_exp([0.1, 0.2, 0.3])
    rep = accuracy([row(0.0, [1, 2, 3], q)], {0.0: truth(0.0, [1, 2, 3], q)})
    assert rep.ticks == 1
    assert rep.rmse_v == pytest.approx(0.0, abs=1e-15)
    assert rep.rmse_euler == pytest.approx(0.0, abs=1e-15)
    assert rep.max_attitude_error == pytest.approx(0.0, abs=1e-7)


def test_velocity_error_is_body_frame_norm():
    ident = np.array([0.0, 0.0, 0.0, 1.0])
    rows = [row(0.0, [1.0, 0.0, 0.0], ident), row(0.1, [0.0, 0.0, 0.0], ident, z=1.5)]
    ref = {0.0: truth(0.0, [0, 0, 0], ident), 0.1: truth(0.1, [0, 0, 0], ident)}
    rep = accuracy(rows, ref)
    assert rep.rmse_v == pytest.approx(np.sqrt(0.5))
    assert rep.rmse_v_axes == pytest.approx((np.sqrt(0.5), 0.0, 0.0))
    assert rep.rmse_height == pytest.approx(np.sqrt(0.125))


def test_yaw_error_wraps():
    q_ref = quat_exp([0.0, 0.0, np.pi - 0.01])
    q_est = quat_mul(quat_exp([0.0, 0.0, 0.02]), q_ref)
    rep = accuracy([row(0.0, [0, 0, 0], q_est)], {0.0: truth(0.0, [0, 0, 0], q_ref)})
    assert rep.rmse_yaw == pytest.approx(0.02, abs=1e-12)
    assert rep.rmse_euler == pytest.approx(0.0, abs=1e-12)


def test_rows_without_truth_are_skipped():
    rep = accuracy([row(0.0, [0, 0, 0], [0, 0, 0, 1])], {})
    assert rep.ticks == 0 and np.isnan(rep.rmse_v)


def test_timing_summary():
    rep = timing([1e-3, 2e-3, 3e-3])
    assert rep.ticks == 3
    assert rep.mean_us == pytest.approx(2000.0)
    assert rep.max_us == pytest.approx(3000.0)
    assert timing([]).ticks == 0
