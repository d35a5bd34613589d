"""Closed-form arrival cost by Schur complement of the KKT system.

The oldest variable group ``X0`` and the multipliers ``lam0`` of the
constraints it owns form ``L0``.  With the KKT system reordered as

    [K00 K01 0 ] [L0       ]   [k0]
    [K10 K11 ..] [X1, lam1 ] = [k1]
    [0   ..  ..] [rest     ]   [..]

eliminating ``L0`` leaves the KKT system of the shorter problem in which the
information of ``L0`` is folded into a quadratic on ``X1``.

Sign/scale convention: costs are ``1/2 X'HX + h'X`` (so ``H`` holds inverse
covariances) and ``k = [-h; g]``.  :class:`ArrivalCost` stores only the part
contributed by the eliminated group,

    M = -K10 K00^-1 K01,      m = K10 K00^-1 k0,

restricted to the rows of ``X1``.  ``X1``'s own noise penalties stay in the
window problem; adding them back gives ``K11 - K10 K00^-1 K01`` and
``-k1 + K10 K00^-1 k0`` (see :func:`schur_complement`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, Group0NotClosed, NonSpdPrior, SingularK00
from .qp import PIVOT_TOL, DenseLdl, QpProblem, kkt_matrix, ruiz_scaling


@dataclass
class ArrivalCost:
    """Quadratic ``1/2 X'MX + m'X`` over the slots of the oldest window group."""

    M: np.ndarray
    m: np.ndarray
    slots: tuple = (("x", 0),)
    anchor: Any = None

    def __post_init__(self):
        self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
        self.m = np.atleast_1d(np.asarray(self.m, dtype=float))
        self.slots = tuple((str(name), int(dim)) for name, dim in self.slots)
        if self.M.shape != (self.dim, self.dim) or self.m.shape != (self.dim,):
            raise DimensionMismatch("arrival cost does not match its slots",
                                    M=self.M.shape, m=self.m.shape, dim=self.dim)

    @property
    def dim(self) -> int:
        return sum(d for _, d in self.slots)

    def slot_offsets(self) -> dict:
        out, off = {}, 0
        for name, d in self.slots:
            out[name] = (off, d)
            off += d
        return out

    def evaluate(self, X) -> float:
        X = np.asarray(X, dtype=float)
        return float(0.5 * X @ self.M @ X + self.m @ X)

    def state_moments(self, slot: str = "x"):
        """Mean and covariance implied by the block of ``slot``."""
        off, d = self.slot_offsets()[slot]
        Ms = self.M[off:off + d, off:off + d]
        cov = np.linalg.inv(Ms)
        return -cov @ self.m[off:off + d], cov


def prior_arrival(x_prior, P0, anchor: Any = None, noise_slots: Sequence = ()) -> ArrivalCost:
    """Gaussian prior ``x ~ N(x_prior, P0)`` as an arrival cost.

    Noise slots listed in ``noise_slots`` (``(name, dim)`` pairs) get zero
    blocks.
    """
    x_prior = np.atleast_1d(np.asarray(x_prior, dtype=float))
    P0 = np.atleast_2d(np.asarray(P0, dtype=float))
    n = x_prior.shape[0]
    if P0.shape != (n, n):
        raise DimensionMismatch("P0 must be n x n", P0=P0.shape, n=n)
    if np.max(np.abs(P0 - P0.T)) > 1e-12 * (1.0 + np.max(np.abs(P0))):
        raise NonSpdPrior("P0 is not symmetric")
    try:
        c = np.linalg.cholesky(P0)
    except np.linalg.LinAlgError as exc:
        raise NonSpdPrior("P0 is not positive definite") from exc
    ci = np.linalg.inv(c)
    info = ci.T @ ci
    info = 0.5 * (info + info.T)
    slots = (("x", n),) + tuple(noise_slots)
    dim = sum(d for _, d in slots)
    M = np.zeros((dim, dim))
    M[:n, :n] = info
    m = np.zeros(dim)
    m[:n] = -info @ x_prior
    return ArrivalCost(M, m, slots, anchor)


@dataclass
class KktSystem:
    """KKT matrix ``K``, right-hand side ``k`` and index bookkeeping.

    After :func:`reorder_kkt`, the first ``lead`` rows are ``L0``, followed by
    ``next_vars`` rows of ``X1`` and ``next_size - next_vars`` rows of ``lam1``.
    """

    K: Any
    k: np.ndarray
    n: int
    layout: Any = None
    lead: int = 0
    next_vars: int = 0
    next_size: int = 0
    next_slots: tuple = ()
    anchor: Any = None
    perm: np.ndarray | None = None

    def group_indices(self, group: int) -> np.ndarray:
        """KKT indices of ``[X_group, lam_group]`` (needs a layout)."""
        lay = self.layout
        return np.concatenate([lay.group_vars(group), self.n + lay.group_rows(group)]).astype(int)


def build_kkt(qp: QpProblem) -> KktSystem:
    n, m = qp.n, qp.m
    if qp.H.shape != (n, n) or (m and qp.G.shape != (m, n)):
        raise DimensionMismatch("QP blocks have inconsistent shapes",
                                H=qp.H.shape, G=getattr(qp.G, "shape", None), n=n, m=m)
    G = qp.G if m else np.zeros((0, n))
    K = kkt_matrix(qp.H, G)
    k = np.concatenate([-np.asarray(qp.h, dtype=float), np.asarray(qp.g, dtype=float)])
    return KktSystem(K=K, k=k, n=n, layout=qp.layout)


def _nonzero_cols(K, rows: np.ndarray) -> np.ndarray:
    if sp.issparse(K):
        sub = sp.csr_matrix(K)[rows]
        sub.eliminate_zeros()
        return np.unique(sub.indices)
    sub = np.asarray(K)[rows]
    return np.flatnonzero(np.any(sub != 0.0, axis=0))


def reorder_kkt(kkt: KktSystem, group0) -> KktSystem:
    """Symmetric permutation placing ``L0`` first, then ``[X1, lam1]``."""
    size = kkt.K.shape[0]
    L0 = np.asarray(group0, dtype=int)
    in0 = np.zeros(size, bool)
    in0[L0] = True
    touched = _nonzero_cols(kkt.K, L0)
    outside = touched[~in0[touched]]
    if kkt.layout is not None and kkt.layout.n_groups > 1:
        X1 = kkt.layout.group_vars(1).astype(int)
        lam1 = (kkt.n + kkt.layout.group_rows(1)).astype(int)
        slots = kkt.layout.group_slots(1)
        anchor = kkt.layout.labels[1]
    else:
        X1 = outside[outside < kkt.n]
        lam1 = np.zeros(0, int)
        slots = (("x", X1.size),)
        anchor = None
    allowed = np.zeros(size, bool)
    allowed[X1] = True
    stray = outside[~allowed[outside]]
    if stray.size:
        raise Group0NotClosed("oldest group couples to variables beyond its successor",
                              indices=stray[:5].tolist())
    nxt = np.concatenate([X1, lam1])
    taken = in0.copy()
    taken[nxt] = True
    rest = np.flatnonzero(~taken)
    perm = np.concatenate([L0, nxt, rest])
    if sp.issparse(kkt.K):
        Kp = sp.csr_matrix(kkt.K)[perm][:, perm]
    else:
        Kp = np.asarray(kkt.K)[np.ix_(perm, perm)]
    return KktSystem(K=Kp, k=kkt.k[perm], n=kkt.n, layout=None, lead=L0.size,
                     next_vars=X1.size, next_size=nxt.size, next_slots=slots,
                     anchor=anchor, perm=perm)


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def _factor_k00(kkt: KktSystem):
    l0 = kkt.lead
    if l0 == 0:
        raise SingularK00("empty leading group")
    K00 = _dense(kkt.K[:l0, :l0])
    d = ruiz_scaling(K00)
    fac = DenseLdl(d[:, None] * K00 * d[None, :], PIVOT_TOL)
    if fac.singular:
        raise SingularK00("K00 has a pivot below threshold", size=l0, zero_pivots=fac.n_zero)
    return d, fac


def _k00_solve(d, fac, B: np.ndarray) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    scale = d if B.ndim == 1 else d[:, None]
    return scale * fac.solve(scale * B)


def marginalize(kkt: KktSystem) -> ArrivalCost:
    """Arrival cost on ``X1`` after eliminating ``L0`` from a reordered system.

    Only ``K00`` is factored; the cost depends on ``lead`` and ``next_vars``
    alone, never on the length of the remaining window.
    """
    l0, nx = kkt.lead, kkt.next_vars
    d, fac = _factor_k00(kkt)
    K10 = _dense(kkt.K[l0:l0 + nx, :l0])
    rhs = np.column_stack([K10.T, kkt.k[:l0]])
    Z = _k00_solve(d, fac, rhs)
    M = -K10 @ Z[:, :nx]
    M = 0.5 * (M + M.T)
    m = K10 @ Z[:, nx]
    return ArrivalCost(M, m, kkt.next_slots, kkt.anchor)


def schur_complement(kkt: KktSystem):
    """``(K11 - K10 K00^-1 K01, -k1 + K10 K00^-1 k0)`` over ``[X1, lam1]``."""
    l0, n1 = kkt.lead, kkt.next_size
    d, fac = _factor_k00(kkt)
    K10 = _dense(kkt.K[l0:l0 + n1, :l0])
    K11 = _dense(kkt.K[l0:l0 + n1, l0:l0 + n1])
    Z = _k00_solve(d, fac, np.column_stack([K10.T, kkt.k[:l0]]))
    M1 = K11 - K10 @ Z[:, :n1]
    m1 = -kkt.k[l0:l0 + n1] + K10 @ Z[:, n1]
    return 0.5 * (M1 + M1.T), m1
