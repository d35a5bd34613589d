"""Decentralized legged-robot state estimation.

An iterated orientation filter feeds rotations to a linear moving-horizon
estimator whose arrival cost is obtained by exact elimination of the KKT
system, so the window estimate equals the full-history one.
"""

from .config import Config, load_config, parse_config
from .ekf import OrientationFilter, OrientationState, ekf_predict, ekf_update_gravity, ekf_update_vo_orientation
from .errors import LegMheError
from .fif import fif_problem, solve_fif
from .horizon import ConstraintBlock, NodeGroup, RecedingHorizon, assemble_groups, solve_groups
from .kkt import ArrivalCost, build_kkt, marginalize, prior_arrival, reorder_kkt
from .legged import MheState, MovingHorizonEstimator, WindowNode, mhe_step
from .logio import SensorLog, read_log, write_log
from .noise import NoiseConfig
from .pipeline import run_estimator
from .qp import QpProblem, QpSolution, solve_eq_qp
from .sim import SimConfig, simulate

__version__ = "0.1.0"

__all__ = [
    "ArrivalCost", "Config", "ConstraintBlock", "LegMheError", "MheState", "MovingHorizonEstimator",
    "NodeGroup", "NoiseConfig", "OrientationFilter", "OrientationState", "QpProblem", "QpSolution",
    "RecedingHorizon", "SensorLog", "SimConfig", "WindowNode", "assemble_groups", "build_kkt",
    "ekf_predict", "ekf_update_gravity", "ekf_update_vo_orientation", "fif_problem", "load_config",
    "marginalize", "mhe_step", "parse_config", "prior_arrival", "read_log", "reorder_kkt",
    "run_estimator", "simulate", "solve_eq_qp", "solve_fif", "solve_groups", "write_log",
]
