"""Linear moving-horizon estimator for base position, velocity, feet and accel bias.

Orientation is not estimated here: every node carries the rotation and gyro
bias produced by the orientation filter, which turns the process and leg
odometry models into linear equality constraints.  Per node ``k`` the state
is ``x = [p, v, p_foot(0..n_feet-1), b_a]`` (world frame, bias in body frame).

Constraint blocks owned by node ``k``:

``dyn``      ``x[k+1] - A x[k] - dx = b``              (needs a successor)
``lo``       ``p - p_foot + dyp = -R fk``              (position form)
             ``v + dyv = -R fk_dot - R (w - b_w)^ fk`` (velocity form, stance)
``contact``  ``p_foot[k+1] - p_foot[k] = 0``           (stance at k and k+1)
``vo``       ``p[k+1] - p[k] + dc = y_c``              (per-node VO increment)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bezier import BezierPath, bezier_interpolate
from .errors import (
    ClockRegression,
    NonConsecutiveNodes,
    NoSampleForFoot,
    NotInContact,
    RankDeficientConstraints,
    RankDeficientG,
    UnsortedVoFrames,
    VelocityFormWithoutContact,
    VoGapExceedsWindow,
)
from .horizon import KIND_ORDER, ConstraintBlock, NodeGroup, RecedingHorizon, assemble_groups
from .kkt import ArrivalCost, prior_arrival
from .noise import NoiseConfig
from .qp import QpProblem, constraint_rows_dependent
from .rotation import skew

log = logging.getLogger(__name__)

SPACING_TOL = 1e-6
TIME_HISTORY_SECONDS = 2.0   # tick times kept for snapping VO frames


def state_dim(n_feet: int) -> int:
    return 9 + 3 * n_feet


@dataclass
class MheState:
    p: np.ndarray
    v: np.ndarray
    p_foot: np.ndarray
    b_a: np.ndarray

    @classmethod
    def from_vector(cls, x, n_feet: int) -> "MheState":
        x = np.asarray(x, dtype=float)
        if x.shape != (state_dim(n_feet),):
            raise ValueError(f"expected {state_dim(n_feet)} entries, got {x.shape}")
        return cls(x[0:3].copy(), x[3:6].copy(), x[6:6 + 3 * n_feet].reshape(n_feet, 3).copy(),
                   x[-3:].copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, np.asarray(self.p_foot).ravel(), self.b_a])

    @property
    def n_feet(self) -> int:
        return len(self.p_foot)


@dataclass
class LegSample:
    fk: np.ndarray       # foot position in the body frame
    fk_dot: np.ndarray   # its time derivative in the body frame


@dataclass
class WindowNode:
    """Everything the estimator knows about one tick."""

    tick: int
    t: float
    R: np.ndarray
    b_omega: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray
    contact: tuple
    lo: dict = field(default_factory=dict)
    vo: np.ndarray | None = None
    revision: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def touch(self) -> None:
        self.revision += 1
        self._cache.clear()

    def __deepcopy__(self, memo):
        return WindowNode(self.tick, self.t, self.R.copy(), self.b_omega.copy(), self.accel.copy(),
                          self.gyro.copy(), tuple(self.contact),
                          {f: LegSample(s.fk.copy(), s.fk_dot.copy()) for f, s in self.lo.items()},
                          None if self.vo is None else self.vo.copy(), self.revision)


def _foot_cols(n_feet: int, foot: int) -> slice:
    return slice(6 + 3 * foot, 9 + 3 * foot)


def _selector(n: int, cols: slice, sign: float = 1.0) -> np.ndarray:
    S = np.zeros((3, n))
    S[:, cols] = sign * np.eye(3)
    return S


def _rotate(R: np.ndarray, Q: np.ndarray) -> np.ndarray:
    out = R @ Q @ R.T
    return 0.5 * (out + out.T)


def build_dynamics_constraint(node_k: WindowNode, node_k1: WindowNode, cfg: NoiseConfig) -> ConstraintBlock:
    """Process model between consecutive ticks (constant specific force over the step)."""
    dt = node_k1.t - node_k.t
    if node_k1.tick != node_k.tick + 1 or abs(dt - cfg.dt) > SPACING_TOL:
        raise NonConsecutiveNodes(ticks=(node_k.tick, node_k1.tick), dt=dt)
    nf = len(node_k.contact)
    n = state_dim(nf)
    R = node_k.R
    acc = R @ node_k.accel + np.array([0.0, 0.0, -cfg.gravity])
    A = np.eye(n)
    A[0:3, 3:6] = dt * np.eye(3)
    A[0:3, -3:] = -0.5 * dt * dt * R
    A[3:6, -3:] = -dt * R
    b = np.zeros(n)
    b[0:3] = 0.5 * dt * dt * acc
    b[3:6] = dt * acc
    Qa = _rotate(R, cfg.Q_a)
    Q = np.zeros((n, n))
    Q[0:3, 0:3] = _rotate(R, cfg.Q_p) + 0.25 * dt ** 4 * Qa
    Q[0:3, 3:6] = Q[3:6, 0:3] = 0.5 * dt ** 3 * Qa
    Q[3:6, 3:6] = dt * dt * Qa
    Qf = _rotate(R, cfg.Q_foot)
    for f in range(nf):
        c = _foot_cols(nf, f)
        Q[c, c] = Qf
    Q[-3:, -3:] = cfg.Q_ba * dt
    eye = np.eye(n)
    return ConstraintBlock("dyn", b, [(1, "x", eye), (0, "x", -A), (0, "dx", -eye)], "dx", Q)


def dynamics_matrices(block: ConstraintBlock) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(A, b, Q)`` of a dynamics block built by :func:`build_dynamics_constraint`."""
    A = -dict((s, M) for o, s, M in block.terms if o == 0)["x"]
    return A, block.rhs, block.cov


def build_lo_constraint(node: WindowNode, foot: int, cfg: NoiseConfig, form: str = "position") -> ConstraintBlock:
    """Leg-odometry block for ``foot``; ``form`` is ``"position"`` or ``"velocity"``."""
    sample = node.lo.get(foot)
    if sample is None:
        raise NoSampleForFoot(tick=node.tick, foot=foot)
    nf = len(node.contact)
    n = state_dim(nf)
    R = node.R
    if form == "position":
        S = _selector(n, slice(0, 3)) + _selector(n, _foot_cols(nf, foot), -1.0)
        y = -R @ sample.fk
        return ConstraintBlock("lo", y, [(0, "x", S), (0, f"dyp{foot}", np.eye(3))],
                               f"dyp{foot}", _rotate(R, cfg.Q_pf))
    if form == "velocity":
        if not node.contact[foot]:
            raise VelocityFormWithoutContact(tick=node.tick, foot=foot)
        rate = node.gyro - node.b_omega
        y = -R @ sample.fk_dot - R @ skew(rate) @ sample.fk
        return ConstraintBlock("lo", y, [(0, "x", _selector(n, slice(3, 6))), (0, f"dyv{foot}", np.eye(3))],
                               f"dyv{foot}", _rotate(R, cfg.Q_vf + cfg.Q_slip))
    raise ValueError(f"unknown leg odometry form {form!r}")


def build_contact_constraint(node: WindowNode, node_next: WindowNode, foot: int) -> ConstraintBlock:
    if not (node.contact[foot] and node_next.contact[foot]):
        raise NotInContact(ticks=(node.tick, node_next.tick), foot=foot)
    nf = len(node.contact)
    n = state_dim(nf)
    S = _selector(n, _foot_cols(nf, foot))
    return ConstraintBlock("contact", np.zeros(3), [(1, "x", S), (0, "x", -S)])


def build_vo_constraint(node: WindowNode, cfg: NoiseConfig) -> ConstraintBlock:
    n = state_dim(len(node.contact))
    S = _selector(n, slice(0, 3))
    return ConstraintBlock("vo", node.vo, [(1, "x", S), (0, "x", -S), (0, "dc", np.eye(3))], "dc", cfg.Q_vo)


def node_group(node: WindowNode, successor: WindowNode | None, cfg: NoiseConfig) -> NodeGroup:
    """All blocks owned by ``node``; cached until the node changes."""
    key = (id(cfg), None if successor is None else (successor.tick, successor.contact))
    hit = node._cache.get(key)
    if hit is not None:
        return hit
    blocks = []
    if successor is not None:
        blocks.append(build_dynamics_constraint(node, successor, cfg))
    for foot in sorted(node.lo):
        if cfg.lo_form in ("both", "position"):
            blocks.append(build_lo_constraint(node, foot, cfg, "position"))
        if cfg.lo_form in ("both", "velocity") and node.contact[foot]:
            blocks.append(build_lo_constraint(node, foot, cfg, "velocity"))
    if successor is not None:
        for foot, (now, nxt) in enumerate(zip(node.contact, successor.contact)):
            if now and nxt:
                blocks.append(build_contact_constraint(node, successor, foot))
        if node.vo is not None:
            blocks.append(build_vo_constraint(node, cfg))
    group = NodeGroup(state_dim(len(node.contact)), blocks, node.tick)
    node._cache[key] = group
    return group


def legged_groups(nodes: Sequence[WindowNode], cfg: NoiseConfig) -> list:
    return [node_group(nd, nodes[i + 1] if i + 1 < len(nodes) else None, cfg)
            for i, nd in enumerate(nodes)]


def assemble_qp(window: Sequence[WindowNode], arrival: ArrivalCost, cfg: NoiseConfig) -> QpProblem:
    if not window:
        raise ValueError("window is empty")
    return assemble_groups(legged_groups(window, cfg), arrival)


def offending_kind(qp: QpProblem) -> str | None:
    """First constraint kind (in storage order) whose rows make ``G`` rank deficient."""
    kinds = qp.layout.row_kinds
    G = qp.G.tocsr()
    for kind in sorted(set(kinds), key=lambda k: KIND_ORDER.get(k, len(KIND_ORDER))):
        upto = [KIND_ORDER.get(k, len(KIND_ORDER)) <= KIND_ORDER.get(kind, len(KIND_ORDER)) for k in kinds]
        if constraint_rows_dependent(G[np.flatnonzero(upto)]):
            return kind
    return None


# -- visual odometry resampling ----------------------------------------------


def nearest_index(times: np.ndarray, t: float) -> int:
    """Index of the entry of sorted ``times`` nearest ``t``; ties go to the earlier one."""
    j = int(np.searchsorted(times, t))
    if j == 0:
        return 0
    if j == len(times):
        return len(times) - 1
    return j - 1 if t - times[j - 1] <= times[j] - t else j


@dataclass
class VoIncrement:
    t_i: float
    t_j: float
    translation: np.ndarray          # body frame at t_i
    rotation: np.ndarray | None = None


@dataclass
class VoCarry:
    """End index and chord velocity of the last resampled interval."""

    end: int
    velocity: np.ndarray


def align_and_interpolate_vo(increments: Sequence[VoIncrement], node_times, rotation_at,
                             carry: VoCarry | None = None) -> tuple[dict, VoCarry | None]:
    """Spread camera-interval translations over the IMU ticks they cover.

    Each interval's endpoints are snapped to the nearest tick, its translation
    is rotated to the world frame with the rotation at the start tick, and the
    cumulative path is fit with one cubic segment per interval.  Inner control
    points follow the chord velocities of the previous and current interval,
    which keeps the curve C1 across contiguous intervals while every interval's
    increments still sum to its own translation.

    Returns ``{tick index: world increment}`` and the updated carry.
    """
    times = np.asarray(node_times, dtype=float)
    out = {}
    last_t = -np.inf
    for inc in increments:
        if inc.t_j <= inc.t_i or inc.t_i < last_t:
            raise UnsortedVoFrames(t_i=inc.t_i, t_j=inc.t_j)
        last_t = inc.t_i
        a, b = nearest_index(times, inc.t_i), nearest_index(times, inc.t_j)
        if b <= a:
            log.debug("VO interval shorter than one tick skipped: %s", (inc.t_i, inc.t_j))
            continue
        chord = rotation_at(a) @ np.asarray(inc.translation, dtype=float)
        span = times[b] - times[a]
        vel = chord / span
        v_in = carry.velocity if carry is not None and carry.end == a else vel
        start = np.zeros(3)
        ctrl = np.array([start, start + v_in * span / 3.0, chord - vel * span / 3.0, chord])
        knots = np.array([times[a], times[a] + span / 3.0, times[b] - span / 3.0, times[b]])
        pts = bezier_interpolate(BezierPath(ctrl, knots), times[a:b + 1])
        for k, d in zip(range(a, b), np.diff(pts, axis=0)):
            out[k] = d
        carry = VoCarry(b, vel)
    return out, carry



# -- estimator ----------------------------------------------------------------


def initial_prior(x0: MheState, cfg: NoiseConfig) -> ArrivalCost:
    nf = x0.n_feet
    blocks = [cfg.P_p, cfg.P_v] + [cfg.P_foot] * nf + [cfg.P_ba]
    n = state_dim(nf)
    P0 = np.zeros((n, n))
    for i, B in enumerate(blocks):
        P0[3 * i:3 * i + 3, 3 * i:3 * i + 3] = B
    return prior_arrival(x0.to_vector(), P0)


class MovingHorizonEstimator:
    """Sliding window of :class:`WindowNode` with an exact arrival cost."""

    def __init__(self, cfg: NoiseConfig, x_prior: MheState, keep_archive: bool = False):
        self.cfg = cfg
        self.n_feet = x_prior.n_feet
        self.horizon = RecedingHorizon(cfg.window, initial_prior(x_prior, cfg),
                                       lambda nodes: legged_groups(nodes, cfg), keep_archive)
        self.times: list = []
        self.keep_times = cfg.window + 1 + int(round(TIME_HISTORY_SECONDS * cfg.rate))
        self.vo_carry: VoCarry | None = None
        self.skipped_vo = 0
        self.last_estimate: MheState | None = None

    @property
    def nodes(self) -> list:
        return self.horizon.nodes

    @property
    def arrival(self) -> ArrivalCost:
        return self.horizon.arrival

    @arrival.setter
    def arrival(self, value: ArrivalCost) -> None:
        self.horizon.arrival = value

    @property
    def oldest_tick(self) -> int:
        return self.nodes[0].tick

    def append(self, node: WindowNode) -> None:
        if self.nodes:
            last = self.nodes[-1]
            if node.t <= last.t:
                raise ClockRegression(t=node.t, previous=last.t)
            if node.tick != last.tick + 1:
                raise NonConsecutiveNodes(ticks=(last.tick, node.tick))
        self.times.append(node.t)
        excess = len(self.times) - self.keep_times
        if excess > 0:
            del self.times[:excess]
            if self.vo_carry is not None:
                self.vo_carry.end -= excess
                if self.vo_carry.end < 0:
                    self.vo_carry = None
        self.horizon.append(node)

    def solve(self):
        nodes = self.nodes
        try:
            sol = self.horizon.solve()
        except RankDeficientConstraints as exc:
            qp = assemble_qp(nodes, self.arrival, self.cfg)
            raise RankDeficientG(str(exc), kind=offending_kind(qp)) from exc
        self.last_estimate = MheState.from_vector(sol.latest, self.n_feet)
        return sol

    def step(self, node: WindowNode) -> MheState:
        self.append(node)
        self.solve()
        return self.last_estimate

    def node_by_tick(self, tick: int) -> WindowNode | None:
        i = tick - self.oldest_tick
        return self.nodes[i] if 0 <= i < len(self.nodes) else None

    def refresh_orientation(self, lookup, since: float = -np.inf) -> int:
        """Reload ``R`` and ``b_omega`` of window nodes at or after ``since``.

        ``lookup(t)`` returns ``(R, b_omega)``.  Returns the number of nodes
        that changed.
        """
        changed = 0
        for node in self.nodes:
            if node.t < since:
                continue
            R, bw = lookup(node.t)
            if not (np.array_equal(R, node.R) and np.array_equal(bw, node.b_omega)):
                node.R, node.b_omega = np.array(R, dtype=float), np.array(bw, dtype=float)
                node.touch()
                changed += 1
        return changed

    def attach_vo(self, increment: VoIncrement, rotation_lookup=None) -> int:
        """Resample one camera interval onto window nodes; returns nodes updated.

        The start rotation comes from the window node when it is still there,
        otherwise from ``rotation_lookup(t)``.  Parts of the interval older
        than the window are dropped; if nothing is left the interval is
        rejected with :class:`VoGapExceedsWindow`.
        """
        if not self.nodes:
            raise VoGapExceedsWindow("no nodes yet")
        first_tick = self.nodes[-1].tick - (len(self.times) - 1)

        def rotation_at(idx: int) -> np.ndarray:
            node = self.node_by_tick(first_tick + idx)
            if node is not None:
                return node.R
            if rotation_lookup is None:
                raise VoGapExceedsWindow("start rotation unavailable", t_i=increment.t_i)
            return np.asarray(rotation_lookup(self.times[idx]), dtype=float)

        per_node, self.vo_carry = align_and_interpolate_vo([increment], self.times, rotation_at,
                                                           self.vo_carry)
        newest = self.nodes[-1].tick
        live = [(self.node_by_tick(first_tick + k), d) for k, d in per_node.items()]
        live = [(nd, d) for nd, d in live if nd is not None and nd.tick < newest]
        if not live:
            self.skipped_vo += 1
            raise VoGapExceedsWindow(t_i=increment.t_i, t_j=increment.t_j, oldest=self.nodes[0].t)
        for nd, d in live:
            nd.vo = d
            nd.touch()
        return len(live)


def mhe_step(estimator: MovingHorizonEstimator, node: WindowNode) -> MheState:
    return estimator.step(node)
