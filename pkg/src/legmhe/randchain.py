"""Random linear-Gaussian chains with hard equality constraints.

Used to exercise the receding-horizon machinery independently of the legged
robot model: the window solution must match the full-history solution on
any such instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .horizon import ConstraintBlock, NodeGroup
from .kkt import ArrivalCost, prior_arrival


@dataclass
class ChainNode:
    dim: int
    transition: tuple               # (A, b, Q): x+ = A x + b + w
    measurement: tuple | None = None   # (C, y, R): y = C x + v
    relative: tuple | None = None      # (D, y, R): y = D (x+ - x) + c
    hard: tuple | None = None          # (E0, E1, e): E0 x + E1 x+ = e


def _spd(rng: np.random.Generator, n: int, lo: float = 0.05, hi: float = 2.0) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * rng.uniform(lo, hi, n)) @ Q.T


def _well_conditioned(rng: np.random.Generator, r: int, n: int) -> np.ndarray:
    """Full-row-rank ``r x n`` matrix with singular values in [0.5, 2]."""
    U, _ = np.linalg.qr(rng.standard_normal((r, r)))
    V, _ = np.linalg.qr(rng.standard_normal((n, r)))
    return (U * rng.uniform(0.5, 2.0, r)) @ V.T


def random_chain(rng: np.random.Generator, n_nodes: int, dim: int | None = None,
                 hard_prob: float = 0.3) -> tuple[ArrivalCost, list]:
    """Prior arrival cost and ``n_nodes`` random nodes of one state dimension."""
    n = int(rng.integers(1, 9)) if dim is None else dim
    nodes = []
    for _ in range(n_nodes):
        A = np.eye(n) + 0.2 * rng.standard_normal((n, n)) / np.sqrt(n)
        node = ChainNode(n, (A, rng.standard_normal(n), _spd(rng, n)))
        if rng.random() < 0.7:
            r = int(rng.integers(1, n + 1))
            node.measurement = (rng.standard_normal((r, n)), rng.standard_normal(r), _spd(rng, r))
        if rng.random() < 0.3:
            r = int(rng.integers(1, n + 1))
            node.relative = (rng.standard_normal((r, n)), rng.standard_normal(r), _spd(rng, r))
        if rng.random() < hard_prob:
            r = int(rng.integers(1, n + 1))
            E0 = _well_conditioned(rng, r, n)
            E1 = rng.standard_normal((r, n)) if rng.random() < 0.5 else np.zeros((r, n))
            node.hard = (E0, E1, rng.standard_normal(r))
        nodes.append(node)
    prior = prior_arrival(rng.standard_normal(n), _spd(rng, n, 0.5, 3.0))
    return prior, nodes


def chain_groups(nodes: list) -> list:
    """Groups for ``nodes``; links to a successor only where one exists."""
    groups = []
    for k, node in enumerate(nodes):
        n = node.dim
        eye = np.eye(n)
        blocks = []
        linked = k + 1 < len(nodes)
        if linked:
            A, b, Q = node.transition
            blocks.append(ConstraintBlock("dyn", b, [(1, "x", eye), (0, "x", -A), (0, "dx", -eye)],
                                          "dx", Q))
        if node.measurement is not None:
            C, y, R = node.measurement
            blocks.append(ConstraintBlock("lo", y, [(0, "x", C), (0, "dy", np.eye(len(y)))], "dy", R))
        if node.hard is not None:
            E0, E1, e = node.hard
            if not np.any(E1):
                blocks.append(ConstraintBlock("contact", e, [(0, "x", E0)]))
            elif linked:
                blocks.append(ConstraintBlock("contact", e, [(0, "x", E0), (1, "x", E1)]))
        if node.relative is not None and linked:
            D, y, R = node.relative
            blocks.append(ConstraintBlock("vo", y, [(1, "x", D), (0, "x", -D),
                                                    (0, "dc", np.eye(len(y)))], "dc", R))
        groups.append(NodeGroup(n, blocks, k))
    return groups
