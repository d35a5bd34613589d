"""Full-information reference: one QP over the entire history.

Built from exactly the same node groups as the moving-horizon estimator, so
any disagreement between the two can only come from the arrival cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .horizon import solve_groups
from .kkt import ArrivalCost
from .legged import MheState, MovingHorizonEstimator, legged_groups
from .noise import NoiseConfig


@dataclass
class FifProblem:
    nodes: list
    prior: ArrivalCost
    cfg: NoiseConfig
    n_feet: int


def fif_problem(estimator: MovingHorizonEstimator) -> FifProblem:
    """Snapshot of everything the estimator has consumed so far.

    The estimator must keep its archive of marginalized nodes.
    """
    return FifProblem(estimator.horizon.full_history(), estimator.horizon.prior,
                      estimator.cfg, estimator.n_feet)


def solve_fif_vector(problem: FifProblem, T: int | None = None) -> np.ndarray:
    """Stacked states of ticks ``0..T`` as an ``(T+1, n)`` array."""
    nodes = problem.nodes if T is None else problem.nodes[:T + 1]
    if not nodes:
        raise ValueError("no nodes to solve")
    sol = solve_groups(legged_groups(nodes, problem.cfg), problem.prior)
    return np.array([sol.state(k) for k in range(len(nodes))])


def solve_fif(problem: FifProblem, T: int | None = None) -> list:
    """Smoothed trajectory of ticks ``0..T`` (all ticks when ``T`` is None)."""
    return [MheState.from_vector(x, problem.n_feet) for x in solve_fif_vector(problem, T)]


def relative_deviation(x_window: np.ndarray, x_full: np.ndarray) -> float:
    """``|x_window - x_full|_inf / max(1, |x_full|_inf)``."""
    return float(np.max(np.abs(x_window - x_full)) / max(1.0, float(np.max(np.abs(x_full)))))
