import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphleak.matching import (CLAMP_EPS, aligned_target, discretize, matched_loss, max_pool_match,
                                refine, slots_to_matrix)

from oracles import bce_matched_loss, exhaustive_min_loss


def random_adj(rng, n, p=0.5):
    a = np.triu(rng.random((n, n)) < p, 1).astype(float)
    return a + a.T


def test_triangle_against_exact_prediction_has_zero_loss():
    k3 = np.ones((3, 3)) - np.eye(3)
    res = max_pool_match(k3, k3)
    assert res.assignment.sum(axis=0).tolist() == [1, 1, 1]
    assert res.matched_loss == pytest.approx(-np.log(1 - CLAMP_EPS), abs=1e-9)
    assert res.matched_loss < 1e-6


def test_uniform_half_prediction_gives_ln2():
    adj = random_adj(np.random.default_rng(0), 5)
    res = max_pool_match(adj, np.full((7, 7), 0.5))
    assert res.matched_loss == pytest.approx(np.log(2), abs=1e-12)


def test_empty_graph_loss_is_mean_negative_log_complement():
    rng = np.random.default_rng(1)
    prob = slots_to_matrix(rng.uniform(0.05, 0.95, size=10), 5)
    res = max_pool_match(np.zeros((3, 3)), prob)
    r, c = np.triu_indices(5, 1)
    assert res.matched_loss == pytest.approx(np.mean(-np.log(1 - prob[r, c])), rel=1e-12)


def test_matched_loss_agrees_with_oracle():
    rng = np.random.default_rng(2)
    adj = random_adj(rng, 4)
    prob = slots_to_matrix(rng.uniform(0.01, 0.99, size=15), 6)
    mapping = np.array([4, 0, 5, 2])
    y = np.zeros((4, 6), dtype=np.int8)
    y[np.arange(4), mapping] = 1
    assert matched_loss(adj, prob, y) == pytest.approx(bce_matched_loss(adj, prob, mapping), rel=1e-12)
    assert matched_loss(adj, prob, y, reduction="sum") == pytest.approx(15 * bce_matched_loss(adj, prob, mapping))


def test_aligned_target_relabels_edges():
    adj = np.array([[0, 1], [1, 0]], dtype=float)
    y = np.array([[0, 0, 1], [1, 0, 0]])
    t = aligned_target(adj, y)
    assert t[0, 2] == t[2, 0] == 1 and t.sum() == 2


def noisy_planted(seed, n, extra):
    rng = np.random.default_rng(seed)
    slots = n + extra
    adj = random_adj(rng, n)
    # a noisy version of a relabelled ground truth, as a trained decoder would emit
    perm = rng.permutation(slots)[:n]
    truth = np.zeros((slots, slots))
    truth[np.ix_(perm, perm)] = adj
    prob = np.clip(truth + rng.normal(0, 0.2, size=truth.shape), 0.02, 0.98)
    prob = np.triu(prob, 1)
    return adj, prob + prob.T


@given(st.integers(0, 10_000), st.integers(2, 5), st.integers(0, 2))
@settings(max_examples=40, deadline=None)
def test_restarted_search_reaches_exhaustive_optimum(seed, n, extra):
    adj, prob = noisy_planted(seed, n, extra)
    res = max_pool_match(adj, prob, restarts=8)
    assert res.matched_loss <= exhaustive_min_loss(adj, prob) + 1e-9


def test_single_search_is_near_optimal_on_small_graphs():
    # without restarts a few percent of instances end in a swap/move local optimum
    misses = 0
    for seed in range(100):
        adj, prob = noisy_planted(seed, 5, 2)
        opt = exhaustive_min_loss(adj, prob)
        res = max_pool_match(adj, prob)
        assert res.matched_loss >= opt - 1e-12
        misses += res.matched_loss > opt + 1e-9
    assert misses <= 8


def test_restarts_never_worse_and_deterministic():
    adj, prob = noisy_planted(1878, 5, 2)
    base = max_pool_match(adj, prob)
    r1, r2 = max_pool_match(adj, prob, restarts=4, seed=1), max_pool_match(adj, prob, restarts=4, seed=1)
    assert r1.matched_loss <= base.matched_loss
    np.testing.assert_array_equal(r1.assignment, r2.assignment)


def test_refine_never_increases_loss():
    rng = np.random.default_rng(3)
    for _ in range(20):
        adj = random_adj(rng, 6)
        prob = slots_to_matrix(rng.uniform(0.01, 0.99, size=28), 8)
        y = np.zeros((6, 8), dtype=np.int8)
        y[np.arange(6), rng.permutation(8)[:6]] = 1
        before = matched_loss(adj, prob, y)
        y2 = refine(adj, prob, y)
        assert matched_loss(adj, prob, y2) <= before + 1e-12
        assert (y2.sum(axis=1) == 1).all() and (y2.sum(axis=0) <= 1).all()


def test_assignment_is_partial_permutation():
    rng = np.random.default_rng(4)
    for method in ("hungarian", "greedy"):
        res = max_pool_match(random_adj(rng, 7), slots_to_matrix(rng.random(45), 10), method=method)
        assert (res.assignment.sum(axis=1) == 1).all()
        assert (res.assignment.sum(axis=0) <= 1).all()
        assert len(set(res.mapping.tolist())) == 7


def test_hungarian_is_no_worse_than_greedy_on_the_relaxed_objective():
    rng = np.random.default_rng(5)
    for _ in range(30):
        x = rng.random((5, 7))
        h, g = discretize(x, "hungarian"), discretize(x, "greedy")
        assert (x * h).sum() >= (x * g).sum() - 1e-12
    # greedy takes the 0.9 first and is forced into the 0.1; the optimum pairs 0.8 + 0.8
    x = np.array([[0.9, 0.8], [0.8, 0.1]])
    assert (x * discretize(x, "greedy")).sum() == pytest.approx(1.0)
    assert (x * discretize(x, "hungarian")).sum() == pytest.approx(1.6)


def planted_instance(seed, density, confidence=0.95):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 15))
    slots = n + 2
    adj = random_adj(rng, n, density)
    perm = rng.permutation(slots)[:n]
    prob = np.full((slots, slots), 1 - confidence)
    prob[np.ix_(perm, perm)] = np.where(adj > 0, confidence, 1 - confidence)
    np.fill_diagonal(prob, 0)
    return adj, prob


def test_recovers_planted_relabelling_on_sparse_graphs():
    # the matcher is a heuristic; on sparse graphs it finds the planted map essentially always
    for seed in range(40):
        adj, prob = planted_instance(seed, 0.3)
        res = max_pool_match(adj, prob)
        assert np.array_equal(aligned_target(adj, res.assignment) > 0, prob > 0.5)


def test_planted_recovery_rate_on_denser_graphs():
    # dense graphs admit swap/move local optima; measured miss rate is about 5%
    hits = 0
    for seed in range(40):
        adj, prob = planted_instance(seed, 0.6)
        hits += np.array_equal(aligned_target(adj, max_pool_match(adj, prob).assignment) > 0, prob > 0.5)
    assert hits >= 36


def test_graph_larger_than_prediction_rejected():
    with pytest.raises(ValueError):
        max_pool_match(np.zeros((4, 4)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        discretize(np.ones((2, 2)), "auction")


def test_all_injective_maps_are_enumerated_by_oracle():
    # sanity of the oracle itself: 3 nodes into 4 slots is 4!/1! = 24 maps
    assert len(list(itertools.permutations(range(4), 3))) == 24
