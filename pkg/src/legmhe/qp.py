"""Direct solver for equality-constrained quadratic programs.

    min  1/2 x'Hx + h'x   s.t.  Gx = g

is solved through its KKT system

    [H  G'] [x  ]   [-h]
    [G  0 ] [lam] = [ g]

The KKT matrix is symmetrically equilibrated before factorization so that the
pivot threshold (``PIVOT_TOL`` relative to the largest entry) is meaningful
even when inverse covariances span many orders of magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatch, IndefiniteReducedHessian, RankDeficientConstraints, SolverFailure

PIVOT_TOL = 1e-12
DENSE_LIMIT = 128
REFINE_STEPS = 3


@dataclass
class QpProblem:
    """Quadratic program data; matrices may be dense arrays or scipy sparse."""

    H: Any
    h: np.ndarray
    G: Any
    g: np.ndarray
    layout: Any = None

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def m(self) -> int:
        return self.g.shape[0]


@dataclass
class QpSolution:
    x: np.ndarray
    lam: np.ndarray
    kkt_residual: float


def _as_csr(A, shape) -> sp.csr_matrix:
    if sp.issparse(A):
        return A.tocsr()
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return sp.csr_matrix(shape)
    return sp.csr_matrix(A)


def kkt_matrix(H, G, delta: float = 0.0):
    """``[[H, G'], [G, -delta I]]``; dense when both inputs are dense."""
    n = H.shape[0]
    m = G.shape[0]
    if not sp.issparse(H) and not sp.issparse(G):
        K = np.zeros((n + m, n + m))
        K[:n, :n] = H
        K[n:, :n] = G
        K[:n, n:] = np.asarray(G).T
        K[n:, n:] -= delta * np.eye(m)
        return K
    if m == 0:
        return _as_csr(H, (n, n))
    Hc = sp.coo_matrix(H)
    Gc = sp.coo_matrix(G)
    parts_r = [Hc.row, Gc.row + n, Gc.col]
    parts_c = [Hc.col, Gc.col, Gc.row + n]
    parts_v = [Hc.data, Gc.data, Gc.data]
    if delta:
        diag = np.arange(n, n + m)
        parts_r.append(diag)
        parts_c.append(diag)
        parts_v.append(np.full(m, -delta))
    return sp.csr_matrix((np.concatenate(parts_v), (np.concatenate(parts_r), np.concatenate(parts_c))),
                         shape=(n + m, n + m))


def ruiz_scaling(K, iterations: int = 10) -> np.ndarray:
    """Diagonal ``d`` such that ``diag(d) K diag(d)`` has rows of unit max-norm."""
    sparse = sp.issparse(K)
    if sparse:
        A = sp.csr_matrix(K)
        A.sum_duplicates()
        vals = np.abs(A.data)
        cols = A.indices
        starts = A.indptr[:-1]
        nonempty = np.diff(A.indptr) > 0
    else:
        A = np.abs(np.asarray(K, dtype=float))
    d = np.ones(A.shape[0])
    for _ in range(iterations):
        if sparse:
            rmax = np.zeros(A.shape[0])
            s = vals * d[cols] * np.repeat(d, np.diff(A.indptr))
            rmax[nonempty] = np.maximum.reduceat(s, starts[nonempty])
        else:
            rmax = (A * np.outer(d, d)).max(axis=1)
        rmax[rmax == 0.0] = 1.0
        d /= np.sqrt(rmax)
        if np.max(np.abs(rmax - 1.0)) < 1e-3:
            break
    return d


class DenseLdl:
    """Bunch-Kaufman ``LDL'`` with pivot magnitudes and inertia."""

    def __init__(self, A: np.ndarray, pivot_tol: float = PIVOT_TOL):
        A = np.asarray(A, dtype=float)
        self.n = A.shape[0]
        lu, d, perm = sla.ldl(A, lower=True, hermitian=True)
        self._L = lu[perm]
        self._perm = perm
        sub = np.diag(d, -1).copy()
        self._ab = np.vstack([np.r_[0.0, sub], np.diag(d), np.r_[sub, 0.0]])
        self.pivots = _block_eigenvalues(np.diag(d), sub)
        scale = np.max(np.abs(A)) if A.size else 1.0
        self.tol = pivot_tol * scale
        self.n_zero = int(np.sum(np.abs(self.pivots) < self.tol))
        self.n_neg = int(np.sum(self.pivots <= -self.tol))
        self.n_pos = self.n - self.n_zero - self.n_neg

    @property
    def singular(self) -> bool:
        return self.n_zero > 0

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        y = sla.solve_triangular(self._L, b[self._perm], lower=True, unit_diagonal=True)
        y = sla.solve_banded((1, 1), self._ab, y)
        s = sla.solve_triangular(self._L.T, y, lower=False, unit_diagonal=True)
        x = np.empty_like(s)
        x[self._perm] = s
        return x


def _block_eigenvalues(diag: np.ndarray, sub: np.ndarray) -> np.ndarray:
    ev = diag.astype(float).copy()
    i = 0
    n = diag.size
    while i < n:
        if i + 1 < n and sub[i] != 0.0:
            a, b, c = diag[i], sub[i], diag[i + 1]
            mid, rad = 0.5 * (a + c), np.hypot(0.5 * (a - c), b)
            ev[i], ev[i + 1] = mid - rad, mid + rad
            i += 2
        else:
            i += 1
    return ev


class ScaledSolver:
    """Factor ``K`` once (after equilibration); solve with refinement.

    ``order`` is an optional symmetric elimination order for the sparse path;
    without it SuperLU picks a column ordering itself.
    """

    def __init__(self, K, dense: bool | None = None, pivot_tol: float = PIVOT_TOL,
                 order: np.ndarray | None = None):
        self.K = K
        self.order = None
        size = K.shape[0]
        self.dense = size <= DENSE_LIMIT if dense is None else dense
        if self.dense and sp.issparse(K):
            K = self.K = K.toarray()
        self.d = ruiz_scaling(K)
        D = sp.diags(self.d)
        if self.dense:
            Ks = self.d[:, None] * np.asarray(K, dtype=float) * self.d[None, :]
            self.factor = DenseLdl(Ks, pivot_tol)
            self.singular = self.factor.singular
            self.inertia = (self.factor.n_pos, self.factor.n_neg, self.factor.n_zero)
        else:
            Ks = sp.csc_matrix(D @ K @ D)
            self.inertia = None
            self.order = order
            try:
                if order is None:
                    self.factor = spla.splu(Ks, permc_spec="COLAMD")
                else:
                    Ks = Ks[order][:, order].tocsc()
                    self.factor = spla.splu(Ks, permc_spec="NATURAL", diag_pivot_thresh=0.1)
            except RuntimeError:
                self.factor = None
                self.singular = True
                return
            piv = np.abs(self.factor.U.diagonal())
            self.singular = bool(np.any(piv < pivot_tol * abs(Ks).max()))

    def _raw(self, b):
        rhs = self.d * b
        if self.dense or self.order is None:
            return self.d * self.factor.solve(rhs)
        z = np.empty_like(rhs)
        z[self.order] = self.factor.solve(rhs[self.order])
        return self.d * z

    def solve(self, b: np.ndarray, steps: int = REFINE_STEPS) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        z = self._raw(b)
        scale = 1.0 + np.max(np.abs(b), initial=0.0)
        for _ in range(steps):
            r = b - self.K @ z
            if np.max(np.abs(r), initial=0.0) <= 1e-15 * scale:
                break
            z = z + self._raw(r)
        return z


def constraint_rows_dependent(G, tol: float = PIVOT_TOL) -> bool:
    m = G.shape[0]
    if m == 0:
        return False
    if sp.issparse(G) and m > DENSE_LIMIT:
        Gs = G.tocsr()
        rs = np.asarray(abs(Gs).max(axis=1).todense()).ravel()
        rs[rs == 0.0] = 1.0
        Gn = sp.diags(1.0 / rs) @ Gs
        try:
            lu = spla.splu((Gn @ Gn.T).tocsc())
        except RuntimeError:
            return True
        return bool(np.min(np.abs(lu.U.diagonal())) < tol)
    Gd = G.toarray() if sp.issparse(G) else np.asarray(G, dtype=float)
    rs = np.max(np.abs(Gd), axis=1)
    if np.any(rs == 0.0):
        return True
    s = np.linalg.svd(Gd / rs[:, None], compute_uv=False)
    return bool(s[-1] < 1e-10 * s[0]) if s.size >= m else True


def _check_shapes(qp: QpProblem) -> None:
    n, m = qp.n, qp.m
    if qp.H.shape != (n, n):
        raise DimensionMismatch("H must be n x n", H=qp.H.shape, n=n)
    if m and qp.G.shape != (m, n):
        raise DimensionMismatch("G must be m x n", G=qp.G.shape, m=m, n=n)


def solve_eq_qp(qp: QpProblem, regularization: float = 0.0, dense: bool | None = None) -> QpSolution:
    """Return the unique KKT point of ``qp``.

    Raises
    ------
    RankDeficientConstraints
        ``G`` has dependent rows.
    IndefiniteReducedHessian
        ``H`` is not positive definite on the null space of ``G``.
    """
    _check_shapes(qp)
    n, m = qp.n, qp.m
    H = qp.H
    asym = abs(H - H.T).max() if sp.issparse(H) else np.max(np.abs(H - H.T), initial=0.0)
    hmax = abs(H).max() if sp.issparse(H) else np.max(np.abs(H), initial=0.0)
    if asym > 1e-12 * (1.0 + hmax):
        raise DimensionMismatch("H is not symmetric", asymmetry=float(asym))
    K = kkt_matrix(H, qp.G if m else np.zeros((0, n)), regularization)
    k = np.concatenate([-np.asarray(qp.h, dtype=float), np.asarray(qp.g, dtype=float)])
    order = None
    if qp.layout is not None and hasattr(qp.layout, "elimination_order"):
        order = qp.layout.elimination_order(n)
    solver = ScaledSolver(K, dense=dense, order=order)
    bad_inertia = solver.inertia is not None and solver.inertia[1] > m
    if solver.singular or bad_inertia:
        if constraint_rows_dependent(qp.G if m else np.zeros((0, n))):
            raise RankDeficientConstraints("dependent constraint rows", m=m)
        raise IndefiniteReducedHessian("reduced Hessian is not positive definite", inertia=solver.inertia)
    z = solver.solve(k)
    if not np.all(np.isfinite(z)):
        raise SolverFailure("non-finite KKT solution")
    res = float(np.max(np.abs(K @ z - k), initial=0.0))
    return QpSolution(x=z[:n], lam=z[n:], kkt_residual=res)
