import numpy as np
import pytest

from helpers import K, path, random_graph, random_perm
from segmn.ged import (
    EditCostModel,
    GEDTooLargeError,
    brute_force_ged,
    edit_cost,
    exact_ged_astar,
    normalized_target,
)
from segmn.graphs import NodeGraph


def test_k2_vs_p3():
    assert exact_ged_astar(K(2), path(3)) == 2
    assert brute_force_ged(K(2), path(3)) == 2


def test_k3_vs_p3():
    assert exact_ged_astar(K(3), path(3)) == 1


def test_labeled_k2_relabel_costs_one():
    assert exact_ged_astar(K(2, node_labels=(0, 1)), K(2, node_labels=(0, 0))) == 1


def test_empty_to_graph_costs_all_insertions():
    g = path(4)
    assert exact_ged_astar(NodeGraph(0, ()), g) == 4 + 3
    assert exact_ged_astar(g, NodeGraph(0, ())) == 4 + 3


def test_identity_and_isomorphic_copies_are_zero():
    rng = np.random.default_rng(0)
    for _ in range(30):
        g = random_graph(rng, 1, 8, 0.4, labels=2)
        assert exact_ged_astar(g, g) == 0
        assert exact_ged_astar(g, g.permuted(random_perm(rng, g.num_nodes))) == 0


def test_symmetry_and_triangle_inequality():
    rng = np.random.default_rng(1)
    for _ in range(40):
        a, b, c = (random_graph(rng, 1, 6, 0.4, labels=2) for _ in range(3))
        ab, ba = exact_ged_astar(a, b), exact_ged_astar(b, a)
        assert ab == ba
        assert ab <= exact_ged_astar(a, c) + exact_ged_astar(c, b)


def test_astar_equals_brute_force_unit_costs():
    rng = np.random.default_rng(2)
    for _ in range(100):
        a, b = random_graph(rng, 1, 5, 0.4, labels=2), random_graph(rng, 1, 5, 0.4, labels=2)
        assert exact_ged_astar(a, b) == brute_force_ged(a, b)


def test_astar_equals_brute_force_general_costs():
    rng = np.random.default_rng(3)
    for _ in range(100):
        cost = EditCostModel(*(float(x) for x in rng.uniform(0.1, 3.0, 5)))
        a, b = random_graph(rng, 1, 5, 0.5, labels=3), random_graph(rng, 1, 5, 0.5, labels=3)
        assert exact_ged_astar(a, b, cost) == pytest.approx(brute_force_ged(a, b, cost), abs=1e-12)


def test_edit_cost_of_identity_mapping():
    g = path(4)
    assert edit_cost(g, g, {i: i for i in range(4)}) == 0
    # deleting everything, inserting everything
    assert edit_cost(g, g, {}) == 2 * (4 + 3)


def test_node_budget_enforced():
    with pytest.raises(GEDTooLargeError, match="budget"):
        exact_ged_astar(path(11), path(3))
    exact_ged_astar(path(10), path(10))  # at the budget is fine


def test_brute_force_limit():
    with pytest.raises(GEDTooLargeError):
        brute_force_ged(path(7), path(2))


def test_negative_costs_rejected():
    with pytest.raises(ValueError):
        EditCostModel(edge_insert=-1)


def test_normalized_target():
    assert normalized_target(0, 4, 7) == 1.0
    assert normalized_target(2, 2, 3) == pytest.approx(0.449329, abs=1e-6)
    assert normalized_target(3, 4, 4) < normalized_target(2, 4, 4)
    with pytest.raises(ValueError):
        normalized_target(-1, 2, 2)
