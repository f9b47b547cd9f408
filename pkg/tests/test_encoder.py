import numpy as np
import pytest

from helpers import K, cycle, path, random_graph, random_perm, star
from segmn.encoder import (
    EncoderParams,
    dual_embed,
    edge_embed,
    edge_embed_arrays,
    graph_arrays,
    node_embed,
    node_input_features,
    residual_gcn,
)
from segmn.autodiff import Tensor
from segmn.graphs import NodeGraph, modified_incidence


def params(in_dim=1, d=6, layers=3, seed=0):
    return EncoderParams(in_dim, d, layers, np.random.default_rng(seed))


def plain_residual(h, a, ws):
    for w in ws:
        h = np.maximum(a @ h @ w, 0) + h
    return h


def test_one_hot_and_constant_inputs():
    g = path(3, node_labels=(2, 0, 2))
    np.testing.assert_array_equal(node_input_features(g, 3), [[0, 0, 1], [1, 0, 0], [0, 0, 1]])
    np.testing.assert_array_equal(node_input_features(path(3), 0), np.ones((3, 1)))


def test_single_edge_graph_edge_embedding_is_lone_node_gcn():
    p = params()
    he = edge_embed(K(2), p)
    # one line-graph node, no line edges: no incoming message, Â = [[1]]
    h0 = np.array([[2.0]]) @ p.P_line.values
    ref = plain_residual(h0, np.ones((1, 1)), [w.values for w in p.W_E])
    assert he.shape == (1, 6)
    np.testing.assert_allclose(he, ref, atol=1e-12)


def test_zero_edge_features_reduce_to_residual_gcn():
    p = params()
    a = graph_arrays(star(3), 0, 4, 3, 3)
    ye = np.zeros_like(a.ye)
    he = edge_embed_arrays(a.xe, a.ae_norm, a.ke, ye, p).values
    ref = plain_residual(a.xe @ p.P_line.values, a.ae_norm, [w.values for w in p.W_E])
    np.testing.assert_allclose(he, ref, atol=1e-12)


def test_four_cycle_edges_are_symmetric():
    he = edge_embed(cycle(4), params(seed=3))
    np.testing.assert_allclose(he, np.broadcast_to(he[0], he.shape), atol=1e-12)


def test_twin_nodes_get_identical_embeddings():
    hv = node_embed(star(4), params(seed=1))
    for k in range(2, 5):
        np.testing.assert_allclose(hv[k], hv[1], atol=1e-12)


def test_zero_layer_weights_leave_projected_input():
    p = params()
    for w in p.W:
        w.values = np.zeros_like(w.values)
    hv = node_embed(path(4), p)
    np.testing.assert_allclose(hv, node_input_features(path(4), 0) @ p.P_node.values)


def test_residual_gcn_layer_matches_numpy():
    rng = np.random.default_rng(4)
    h, a = rng.normal(size=(5, 3)), rng.random((5, 5))
    ws = [Tensor(rng.normal(size=(3, 3))) for _ in range(2)]
    out = residual_gcn(Tensor(h), a, ws).values
    np.testing.assert_allclose(out, plain_residual(h, a, [w.values for w in ws]), atol=1e-12)


def test_dual_k2_edge_part_equals_edge_embedding():
    p = params()
    he = edge_embed(K(2), p)
    de = dual_embed(K(2), node_embed(K(2), p), he)
    np.testing.assert_allclose(de.edge_part, np.vstack([he, he]))
    assert de.H.shape == (2, 12)


def test_dual_p3_center_aggregates_both_edges():
    rng = np.random.default_rng(0)
    he = rng.normal(size=(2, 4))
    de = dual_embed(path(3), np.zeros((3, 4)), he)
    np.testing.assert_allclose(de.edge_part[1], (he[0] + he[1]) / np.sqrt(2), atol=1e-12)
    np.testing.assert_allclose(de.edge_part[0], he[0] / np.sqrt(2), atol=1e-12)


def test_dual_edgeless_graph_has_zero_edge_part():
    g = NodeGraph(3, ())
    de = dual_embed(g, np.ones((3, 4)), np.zeros((0, 4)))
    np.testing.assert_array_equal(de.edge_part, np.zeros((3, 4)))
    np.testing.assert_array_equal(de.node_part, np.ones((3, 4)))


@pytest.mark.parametrize("seed", range(10))
def test_dual_embedding_is_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 3, 9, 0.5, labels=3)
    perm = random_perm(rng, g.num_nodes)
    h = g.permuted(perm)
    p = params(in_dim=3, seed=seed)

    def H(x):
        return dual_embed(x, node_embed(x, p, 3), edge_embed(x, p, 3)).H

    a, b = H(g), H(h)
    np.testing.assert_allclose(b[perm], a, atol=1e-9)


def test_edge_part_is_local():
    # relabeling node 9 of a 10-path cannot reach node 0 through 3 layers
    p = params(in_dim=2)
    g1 = path(10, node_labels=(0,) * 10)
    g2 = path(10, node_labels=(0,) * 9 + (1,))
    e1 = modified_incidence(g1) @ edge_embed(g1, p, 2)
    e2 = modified_incidence(g2) @ edge_embed(g2, p, 2)
    np.testing.assert_array_equal(e1[0], e2[0])
    np.testing.assert_array_equal(node_embed(g1, p, 2)[0], node_embed(g2, p, 2)[0])
    assert not np.allclose(e1[9], e2[9])


def test_padding_rows_stay_zero():
    p = params()
    a = graph_arrays(path(3), 0, 6, 5, 5)
    he = edge_embed_arrays(a.xe, a.ae_norm, a.ke, a.ye, p).values
    assert np.all(he[2:] == 0)
    assert np.all(np.isfinite(he))
