"""Chain-structured equality-constrained least squares and its receding horizon.

A problem is a list of :class:`NodeGroup`.  Group ``k`` owns its state slot
``"x"``, one noise slot per noisy :class:`ConstraintBlock`, and the blocks
themselves.  A block may reference slots of its own group (offset 0) and of
the next group (offset 1), never further; this is what keeps the KKT system
banded and lets the oldest group be eliminated in closed form.

The decision vector is stored slot-kind major: every state first, then the
dynamics noise ``dx*``, then ``dc*``, then the remaining noise slots, each in
group order.  Constraint rows are stored kind major as well (see
``KIND_ORDER``).  :class:`QpLayout` maps groups back to these indices.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch
from .kkt import ArrivalCost, build_kkt, marginalize, reorder_kkt
from .qp import QpProblem, QpSolution, solve_eq_qp

KIND_ORDER = {"dyn": 0, "lo": 1, "contact": 2, "vo": 3}


def _slot_rank(name: str) -> int:
    if name == "x":
        return 0
    if name.startswith("dx"):
        return 1
    if name.startswith("dc"):
        return 2
    return 3


@dataclass
class ConstraintBlock:
    """Rows ``sum_i A_i X[offset_i][slot_i] = rhs``.

    ``terms`` is a sequence of ``(offset, slot, A)``.  When ``noise_slot`` is
    set, the block owns that slot (its dimension is ``cov.shape[0]``) and the
    slot is penalized by ``1/2 d' cov^-1 d``; the caller lists the slot among
    ``terms`` with whatever coefficient the model needs.  Blocks without a
    noise slot are hard constraints.
    """

    kind: str
    rhs: np.ndarray
    terms: Sequence
    noise_slot: str | None = None
    cov: np.ndarray | None = None
    _info: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.rhs = np.atleast_1d(np.asarray(self.rhs, dtype=float))
        self.terms = tuple((int(o), str(s), np.atleast_2d(np.asarray(A, dtype=float)))
                           for o, s, A in self.terms)
        for _, slot, A in self.terms:
            if A.shape[0] != self.rhs.size:
                raise DimensionMismatch("term rows differ from rhs", slot=slot,
                                        rows=A.shape[0], rhs=self.rhs.size)
        if self.noise_slot is not None:
            if self.cov is None:
                raise DimensionMismatch("noise slot without covariance", slot=self.noise_slot)
            self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))

    @property
    def rows(self) -> int:
        return self.rhs.size

    @property
    def info(self) -> np.ndarray:
        if self._info is None:
            c = np.linalg.cholesky(self.cov)
            ci = np.linalg.inv(c)
            info = ci.T @ ci
            self._info = 0.5 * (info + info.T)
        return self._info

    def residual(self, current: dict, following: dict | None = None) -> np.ndarray:
        """``sum A_i X_i - rhs`` given slot values of the two groups."""
        out = -self.rhs.copy()
        for off, slot, A in self.terms:
            src = current if off == 0 else following
            out += A @ src[slot]
        return out


@dataclass
class _Compiled:
    """Group data in local coordinates, ready to be shifted into a window."""

    slot_pos: dict          # name -> (rank, start within the group's rank segment, dim)
    rank_dims: np.ndarray   # total dimension per slot rank
    kind_rows: np.ndarray   # constraint rows per kind id
    kind_names: list        # per kind id: row kind label of every row
    kind_hard: list         # per kind id: whether each row has no noise slot
    rhs: list               # per kind id: stacked right-hand sides
    g0: tuple               # offset-0 entries: kind, local row, rank, local col, value
    g1: list                # offset-1 terms: (kind, local rows, slot, A)
    hess: tuple             # noise information: rank, local row, local col, value


N_KINDS = len(KIND_ORDER) + 1


@dataclass
class NodeGroup:
    state_dim: int
    blocks: list = field(default_factory=list)
    label: Any = None
    _compiled: dict = field(default_factory=dict, repr=False, compare=False)

    def slots(self) -> list:
        found = [("x", self.state_dim)]
        found += [(b.noise_slot, b.cov.shape[0]) for b in self.blocks if b.noise_slot]
        names = [n for n, _ in found]
        if len(set(names)) != len(names):
            raise DimensionMismatch("duplicate slot names in group", slots=names)
        return sorted(found, key=lambda s: _slot_rank(s[0]))

    def compiled(self, closed: bool) -> _Compiled:
        """Local triplets; with ``closed`` the blocks reaching the next group are left out."""
        hit = self._compiled.get(closed)
        if hit is None:
            hit = self._compiled[closed] = self._compile(closed)
        return hit

    def _compile(self, closed: bool) -> _Compiled:
        slot_pos = {}
        rank_dims = np.zeros(4, dtype=int)
        for name, d in self.slots():
            r = _slot_rank(name)
            slot_pos[name] = (r, int(rank_dims[r]), d)
            rank_dims[r] += d
        kind_rows = np.zeros(N_KINDS, dtype=int)
        kind_names = [[] for _ in range(N_KINDS)]
        kind_hard = [[] for _ in range(N_KINDS)]
        rhs = [[] for _ in range(N_KINDS)]
        g0 = [[] for _ in range(5)]
        g1 = []
        for blk in self.blocks:
            if any(o > 1 for o, _, _ in blk.terms):
                raise DimensionMismatch("block reaches more than one group ahead", kind=blk.kind)
            if closed and any(o > 0 for o, _, _ in blk.terms):
                continue
            kid = KIND_ORDER.get(blk.kind, len(KIND_ORDER))
            rows = np.arange(kind_rows[kid], kind_rows[kid] + blk.rows)
            for o, slot, A in blk.terms:
                if o == 1:
                    g1.append((kid, rows, slot, A, blk.kind))
                    continue
                if slot not in slot_pos:
                    raise DimensionMismatch("block references unknown slot", kind=blk.kind,
                                            slot=slot, group=self.label)
                rank, start, d = slot_pos[slot]
                if A.shape[1] != d:
                    raise DimensionMismatch("term width differs from slot", kind=blk.kind,
                                            slot=slot, width=A.shape[1], dim=d)
                ii, jj = np.nonzero(A)
                g0[0].append(np.full(ii.size, kid))
                g0[1].append(rows[ii])
                g0[2].append(np.full(ii.size, rank))
                g0[3].append(start + jj)
                g0[4].append(A[ii, jj])
            kind_rows[kid] += blk.rows
            kind_names[kid].extend([blk.kind] * blk.rows)
            kind_hard[kid].extend([blk.noise_slot is None] * blk.rows)
            rhs[kid].append(blk.rhs)
        h = [[] for _ in range(4)]
        for blk in self.blocks:
            if blk.noise_slot is None:
                continue
            rank, start, d = slot_pos[blk.noise_slot]
            idx = start + np.arange(d)
            h[0].append(np.full(d * d, rank))
            h[1].append(np.repeat(idx, d))
            h[2].append(np.tile(idx, d))
            h[3].append(blk.info.ravel())
        return _Compiled(slot_pos, rank_dims, kind_rows, kind_names, kind_hard,
                         [np.concatenate(r) if r else np.zeros(0) for r in rhs],
                         tuple(_cat(part) for part in g0), g1, tuple(_cat(part) for part in h))


def _cat(parts) -> np.ndarray:
    return np.concatenate(parts) if parts else np.zeros(0)


@dataclass
class QpLayout:
    slots: list            # per group: {slot name: global variable indices}
    rows: list             # per group: global row indices of owned blocks
    labels: list
    row_kinds: np.ndarray  # kind of every constraint row
    hard_rows: np.ndarray  # rows of blocks without a noise slot

    @property
    def n_groups(self) -> int:
        return len(self.slots)

    def group_vars(self, k: int) -> np.ndarray:
        return np.concatenate(list(self.slots[k].values())).astype(int)

    def group_rows(self, k: int) -> np.ndarray:
        return self.rows[k]

    def group_slots(self, k: int) -> tuple:
        return tuple((name, idx.size) for name, idx in self.slots[k].items())

    def state(self, k: int) -> np.ndarray:
        return self.slots[k]["x"]

    def elimination_order(self, n: int) -> np.ndarray:
        """KKT index order that eliminates the chain group by group.

        Within a group: noise slots, then the rows of noisy blocks, then the
        state, then hard-constraint rows.  ``n`` is the number of variables.
        """
        order = []
        for k, slots in enumerate(self.slots):
            hard = self.hard_rows[self.rows[k]]
            order += [idx for name, idx in slots.items() if name != "x"]
            order.append(n + self.rows[k][~hard])
            order.append(slots["x"])
            order.append(n + self.rows[k][hard])
        return np.concatenate(order).astype(int)


def assemble_groups(groups: Sequence[NodeGroup], arrival: ArrivalCost | None,
                    open_end: bool = False) -> QpProblem:
    """Stack ``groups`` into one sparse QP.

    With ``open_end`` the blocks of the last group that reference a following
    group are left out (their noise slots stay declared); the result then
    carries exactly the rows needed to eliminate the first group.
    """
    if not groups:
        raise DimensionMismatch("no groups to assemble")
    ng = len(groups)
    last = groups[-1]
    comp = [g.compiled(False) for g in groups[:-1]] + [last.compiled(True)]
    if not open_end and comp[-1].kind_rows.sum() != last.compiled(False).kind_rows.sum():
        blk = next(b for b in last.blocks if any(o > 0 for o, _, _ in b.terms))
        raise DimensionMismatch("block references a group past the window", kind=blk.kind, group=ng - 1)

    # global offset of every (group, rank) variable segment and (group, kind) row segment
    dims = np.array([c.rank_dims for c in comp])
    col_off = _segment_offsets(dims)
    rows = np.array([c.kind_rows for c in comp])
    row_off = _segment_offsets(rows)
    n = int(dims.sum())
    m = int(rows.sum())

    g_r, g_c, g_v = [], [], []
    h_r, h_c, h_v = [], [], []
    for k, c in enumerate(comp):
        kid, rl, rank, cl, val = c.g0
        kid = kid.astype(int)
        rank = rank.astype(int)
        g_r.append(row_off[k, kid] + rl.astype(int))
        g_c.append(col_off[k, rank] + cl.astype(int))
        g_v.append(val)
        for kid1, rloc, slot, A, kind in c.g1:
            nxt = comp[k + 1].slot_pos.get(slot)
            if nxt is None:
                raise DimensionMismatch("block references unknown slot", kind=kind, slot=slot, group=k + 1)
            rank1, start, d = nxt
            if A.shape[1] != d:
                raise DimensionMismatch("term width differs from slot", kind=kind, slot=slot,
                                        width=A.shape[1], dim=d)
            ii, jj = np.nonzero(A)
            g_r.append(row_off[k, kid1] + rloc[ii])
            g_c.append(col_off[k + 1, rank1] + start + jj)
            g_v.append(A[ii, jj])
        hr, hi, hj, hv = c.hess
        base = col_off[k, hr.astype(int)]
        h_r.append(base + hi.astype(int))
        h_c.append(base + hj.astype(int))
        h_v.append(hv)

    slot_idx = []
    rows_of = []
    for k, c in enumerate(comp):
        slot_idx.append({name: col_off[k, r] + start + np.arange(d)
                         for name, (r, start, d) in c.slot_pos.items()})
        rows_of.append(np.concatenate([row_off[k, kid] + np.arange(rows[k, kid])
                                       for kid in range(N_KINDS)]).astype(int))
    rhs = [c.rhs[kid] for kid in range(N_KINDS) for c in comp]
    kinds = [name for kid in range(N_KINDS) for c in comp for name in c.kind_names[kid]]
    hard = [flag for kid in range(N_KINDS) for c in comp for flag in c.kind_hard[kid]]

    h = np.zeros(n)
    if arrival is not None:
        aidx = []
        keep = []
        for (name, d), (a_off, _) in zip(arrival.slots, arrival.slot_offsets().values()):
            local = slot_idx[0].get(name)
            if local is None:
                block = arrival.M[a_off:a_off + d]
                if np.any(block != 0.0) or np.any(arrival.m[a_off:a_off + d] != 0.0):
                    raise DimensionMismatch("arrival cost has a slot the oldest group lacks",
                                            slot=name)
                continue
            if local.size != d:
                raise DimensionMismatch("arrival slot dimension differs", slot=name,
                                        arrival=d, group=local.size)
            aidx.append(local)
            keep.append(np.arange(a_off, a_off + d))
        if aidx:
            aidx = np.concatenate(aidx)
            keep = np.concatenate(keep)
            Msub = arrival.M[np.ix_(keep, keep)]
            d = aidx.size
            h_r.append(np.repeat(aidx, d))
            h_c.append(np.tile(aidx, d))
            h_v.append(Msub.ravel())
            h[aidx] += arrival.m[keep]

    cat = lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt)
    H = sp.csr_matrix((cat(h_v, float), (cat(h_r, int), cat(h_c, int))), shape=(n, n))
    G = sp.csr_matrix((cat(g_v, float), (cat(g_r, int), cat(g_c, int))), shape=(m, n))
    layout = QpLayout(
        slots=slot_idx,
        rows=rows_of,
        labels=[g.label for g in groups],
        row_kinds=np.array(kinds, dtype=object),
        hard_rows=np.array(hard, dtype=bool),
    )
    return QpProblem(H=H, h=h, G=G, g=cat(rhs, float), layout=layout)


def _segment_offsets(sizes: np.ndarray) -> np.ndarray:
    """Start of each ``(group, kind)`` segment when stored kind major, group minor."""
    flat = sizes.T.ravel()
    starts = np.concatenate([[0], np.cumsum(flat)[:-1]])
    return starts.reshape(sizes.shape[1], sizes.shape[0]).T.astype(int)


def marginalize_first(groups: Sequence[NodeGroup], arrival: ArrivalCost | None) -> ArrivalCost:
    """Arrival cost on the second group after eliminating the first.

    ``groups`` must include the third group when it exists so that the second
    group is built exactly as it appears in the full window; blocks reaching
    past the second group are left out since they cannot touch the first.
    """
    qp = assemble_groups(list(groups[:2]), arrival, open_end=True)
    kkt = build_kkt(qp)
    return marginalize(reorder_kkt(kkt, kkt.group_indices(0)))


@dataclass
class WindowSolution:
    solution: QpSolution
    layout: QpLayout
    qp: QpProblem

    @property
    def x(self) -> np.ndarray:
        return self.solution.x

    def state(self, k: int) -> np.ndarray:
        return self.solution.x[self.layout.state(k)]

    def slot(self, k: int, name: str) -> np.ndarray:
        return self.solution.x[self.layout.slots[k][name]]

    @property
    def latest(self) -> np.ndarray:
        return self.state(self.layout.n_groups - 1)

    def constraint_violation(self) -> float:
        qp = self.qp
        if qp.m == 0:
            return 0.0
        return float(np.max(np.abs(qp.G @ self.x - qp.g)))


def solve_groups(groups: Sequence[NodeGroup], arrival: ArrivalCost | None,
                 regularization: float = 0.0) -> WindowSolution:
    qp = assemble_groups(groups, arrival)
    return WindowSolution(solve_eq_qp(qp, regularization=regularization), qp.layout, qp)


class RecedingHorizon:
    """Window of at most ``window + 1`` nodes with an exact arrival cost.

    ``build_groups(nodes)`` turns the current node list into groups; group
    ``k`` must depend only on ``nodes[k]`` and ``nodes[k + 1]``.  Nodes that
    leave the window are marginalized one at a time, oldest first, and kept in
    ``archive`` (deep copies) when ``keep_archive`` is set.
    """

    def __init__(self, window: int, prior: ArrivalCost,
                 build_groups: Callable[[list], list], keep_archive: bool = False,
                 regularization: float = 0.0):
        if window < 1:
            raise ValueError("window must be at least 1")
        self.window = int(window)
        self.arrival = prior
        self.prior = prior
        self.build_groups = build_groups
        self.nodes: list = []
        self.archive: list | None = [] if keep_archive else None
        self.regularization = regularization
        self.n_marginalized = 0
        self.last: WindowSolution | None = None

    def append(self, node) -> None:
        self.nodes.append(node)
        while len(self.nodes) > self.window + 1:
            self.marginalize_oldest()

    def marginalize_oldest(self) -> ArrivalCost:
        self.arrival = marginalize_first(self.build_groups(self.nodes[:3]), self.arrival)
        old = self.nodes.pop(0)
        if self.archive is not None:
            self.archive.append(copy.deepcopy(old))
        self.n_marginalized += 1
        return self.arrival

    def solve(self) -> WindowSolution:
        self.last = solve_groups(self.build_groups(self.nodes), self.arrival, self.regularization)
        return self.last

    def push(self, node) -> np.ndarray:
        """Append ``node``, shift the window if needed and return the newest state."""
        self.append(node)
        return self.solve().latest

    def full_history(self) -> list:
        if self.archive is None:
            raise ValueError("archive was not kept")
        return self.archive + self.nodes
