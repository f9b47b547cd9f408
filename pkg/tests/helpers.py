"""Small graph builders shared by the test modules."""

import itertools

import numpy as np

from segmn.graphs import NodeGraph


def K(n, **kw):
    return NodeGraph(n, tuple(itertools.combinations(range(n), 2)), **kw)


def path(n, **kw):
    return NodeGraph(n, tuple((i, i + 1) for i in range(n - 1)), **kw)


def cycle(n, **kw):
    return NodeGraph(n, tuple((i, (i + 1) % n) for i in range(n)), **kw)


def star(leaves, **kw):
    return NodeGraph(leaves + 1, tuple((0, k) for k in range(1, leaves + 1)), **kw)


def random_graph(rng, lo=2, hi=8, p=0.4, labels=0, graph_id=""):
    n = int(rng.integers(lo, hi + 1))
    edges = tuple(e for e in itertools.combinations(range(n), 2) if rng.random() < p)
    lab = tuple(int(x) for x in rng.integers(0, labels, n)) if labels else None
    return NodeGraph(n, edges, lab, graph_id=graph_id)


def random_perm(rng, n):
    return [int(x) for x in rng.permutation(n)]


def tiny_corpus(n=12, seed=0, labels=2, test_fraction=0.25):
    from segmn.datasets import generate_synthetic, label_corpus

    c = generate_synthetic(n, (3, 6), 0.5, labels, seed=seed, test_fraction=test_fraction)
    label_corpus(c, workers=1)
    return c


TINY = dict(d=8, dk=8, att_dim=4, conv_channels=(4, 4), batch_size=16, epochs=2, val_fraction=0.1)
