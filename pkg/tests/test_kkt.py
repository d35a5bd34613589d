import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import legmhe.horizon as horizon
from legmhe.errors import Group0NotClosed, NonSpdPrior, SingularK00
from legmhe.horizon import RecedingHorizon, assemble_groups, marginalize_first
from legmhe.kkt import ArrivalCost, build_kkt, marginalize, prior_arrival, reorder_kkt, schur_complement
from legmhe.qp import QpProblem
from legmhe.randchain import ChainNode, chain_groups, random_chain


def scalar_chain():
    one = np.eye(1)
    first = ChainNode(1, (one, np.zeros(1), one), measurement=(one, np.array([2.0]), one))
    return [first, ChainNode(1, (one, np.zeros(1), one))]


def test_kkt_of_unconstrained_identity():
    kkt = build_kkt(QpProblem(np.eye(1), np.array([-3.0]), np.zeros((0, 1)), np.zeros(0)))
    np.testing.assert_array_equal(kkt.K, [[1.0]])
    np.testing.assert_array_equal(kkt.k, [3.0])


def test_kkt_of_pinned_scalar():
    kkt = build_kkt(QpProblem(np.eye(1), np.zeros(1), np.eye(1), np.array([3.0])))
    np.testing.assert_array_equal(kkt.K, [[1.0, 1.0], [1.0, 0.0]])
    np.testing.assert_array_equal(kkt.k, [0.0, 3.0])
    x, lam = np.linalg.solve(kkt.K, kkt.k)
    assert (x, lam) == (3.0, -3.0)


def test_reorder_identity_and_swap():
    H = np.array([[2.0, 1.0], [1.0, 3.0]])
    kkt = build_kkt(QpProblem(H, np.array([1.0, 2.0]), np.zeros((0, 2)), np.zeros(0)))
    same = reorder_kkt(kkt, [0])
    np.testing.assert_array_equal(same.perm, [0, 1])
    np.testing.assert_array_equal(same.K, H)
    swapped = reorder_kkt(kkt, [1])
    np.testing.assert_array_equal(swapped.perm, [1, 0])
    np.testing.assert_array_equal(swapped.K, [[3.0, 1.0], [1.0, 2.0]])
    np.testing.assert_array_equal(swapped.k, [-2.0, -1.0])
    assert (swapped.lead, swapped.next_vars) == (1, 1)


def test_group_reaching_foreign_multiplier_is_not_closed():
    qp = QpProblem(np.eye(2), np.zeros(2), np.array([[1.0, -1.0]]), np.zeros(1))
    with pytest.raises(Group0NotClosed):
        reorder_kkt(build_kkt(qp), [0])


def test_scalar_kalman_by_hand():
    # variables: x0, process noise, measurement noise, x1
    H = np.diag([1.0, 1.0, 1.0, 0.0])
    G = np.array([[-1.0, -1.0, 0.0, 1.0],
                  [1.0, 0.0, 1.0, 0.0]])
    kkt = build_kkt(QpProblem(H, np.zeros(4), G, np.array([0.0, 2.0])))
    cost = marginalize(reorder_kkt(kkt, [0, 1, 2, 4, 5]))
    np.testing.assert_allclose(cost.M, [[1 / 1.5]], rtol=1e-14)
    np.testing.assert_allclose(cost.m, [-1 / 1.5], rtol=1e-14)
    mean, var = cost.state_moments()
    np.testing.assert_allclose([mean[0], var[0, 0]], [1.0, 1.5], rtol=1e-14)


def test_scalar_kalman_through_groups():
    cost = marginalize_first(chain_groups(scalar_chain()), prior_arrival([0.0], [[1.0]]))
    mean, var = cost.state_moments()
    assert abs(mean[0] - 1.0) < 1e-10 and abs(var[0, 0] - 1.5) < 1e-10


def kalman_step(x, P, node):
    A, b, Q = node.transition
    if node.measurement is not None:
        C, y, R = node.measurement
        S = C @ P @ C.T + R
        gain = P @ C.T @ np.linalg.inv(S)
        x = x + gain @ (y - C @ x)
        P = (np.eye(len(x)) - gain @ C) @ P
    return A @ x + b, A @ P @ A.T + Q


def test_matches_kalman_filter_on_random_systems(rng):
    for _ in range(50):
        prior, nodes = random_chain(rng, 2, dim=3, hard_prob=0.0)
        nodes[0].relative = None
        x_prior = -np.linalg.solve(prior.M, prior.m)
        x_pred, P_pred = kalman_step(x_prior, np.linalg.inv(prior.M), nodes[0])
        cost = marginalize_first(chain_groups(nodes), prior)
        info = np.linalg.inv(P_pred)
        scale = 1 + np.abs(info).max()
        assert np.abs(cost.M[:3, :3] - info).max() <= 1e-10 * scale
        assert np.abs(cost.M[3:]).max(initial=0.0) <= 1e-10 * scale
        assert np.abs(cost.m[:3] + info @ x_pred).max() <= 1e-10 * (1 + np.abs(info @ x_pred).max())


def test_underdetermined_leading_group_is_singular():
    # a + b = x1 with no cost on a or b
    qp = QpProblem(np.diag([0.0, 0.0, 1.0]), np.zeros(3), np.array([[1.0, 1.0, -1.0]]), np.zeros(1))
    kkt = reorder_kkt(build_kkt(qp), [0, 1, 3])
    with pytest.raises(SingularK00):
        marginalize(kkt)


def test_prior_arrival_example():
    cost = prior_arrival([1.0, 2.0], np.diag([2.0, 4.0]), noise_slots=(("dx", 2),))
    np.testing.assert_allclose(cost.M[:2, :2], np.diag([0.5, 0.25]))
    np.testing.assert_array_equal(cost.M[2:], 0.0)
    np.testing.assert_allclose(cost.m, [-0.5, -0.5, 0.0, 0.0])
    assert cost.slots == (("x", 2), ("dx", 2))


@pytest.mark.parametrize("P0", [[[1.0, 0.5], [0.0, 1.0]], [[1.0, 2.0], [2.0, 1.0]], [[0.0, 0.0], [0.0, 1.0]]])
def test_prior_rejects_non_spd(P0):
    with pytest.raises(NonSpdPrior):
        prior_arrival([0.0, 0.0], P0)


@given(st.integers(0, 10**6))
def test_arrival_is_symmetric_psd(seed):
    rng = np.random.default_rng(seed)
    prior, nodes = random_chain(rng, 3)
    cost = marginalize_first(chain_groups(nodes), prior)
    assert np.array_equal(cost.M, cost.M.T)
    assert np.linalg.eigvalsh(cost.M).min() >= -1e-10 * (1 + np.abs(cost.M).max())


def test_schur_complement_adds_own_penalties(rng):
    prior, nodes = random_chain(rng, 3, dim=2, hard_prob=0.0)
    qp = assemble_groups(chain_groups(nodes)[:2], prior, open_end=True)
    kkt = reorder_kkt(build_kkt(qp), build_kkt(qp).group_indices(0))
    cost = marginalize(kkt)
    M1, m1 = schur_complement(kkt)
    X1 = qp.layout.group_vars(1)
    nx = X1.size
    H = qp.H.toarray() if hasattr(qp.H, "toarray") else qp.H
    np.testing.assert_allclose(M1[:nx, :nx] - cost.M, H[np.ix_(X1, X1)], atol=1e-12)
    np.testing.assert_allclose(m1[:nx] - cost.m, qp.h[X1], atol=1e-12)


def test_marginalization_size_independent_of_history(monkeypatch, rng):
    sizes = []
    real = horizon.build_kkt

    def spy(qp):
        kkt = real(qp)
        sizes.append(kkt.K.shape)
        return kkt

    monkeypatch.setattr(horizon, "build_kkt", spy)
    prior, template = random_chain(rng, 1, dim=4, hard_prob=1.0)
    template[0].measurement = template[0].measurement or (np.eye(4), np.zeros(4), np.eye(4))
    h = RecedingHorizon(3, prior, chain_groups)
    for _ in range(40):
        h.push(template[0])
    assert len(sizes) == 36
    assert len(set(sizes[1:])) == 1


def test_arrival_cost_rejects_wrong_shape():
    with pytest.raises(Exception):
        ArrivalCost(np.eye(2), np.zeros(3))
