"""Graph containers and the structural transforms used by the model.

A :class:`NodeGraph` is an undirected simple graph with optional categorical
node labels. Line graphs feed the edge-embedding stack, assignment graphs feed
structure perception matching, and the modified incidence matrix routes edge
embeddings back onto nodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Any, Sequence

import numpy as np


class GraphValidationError(ValueError):
    """Raised when a graph violates the simple-undirected-graph contract."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NodeGraph:
    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    node_labels: tuple[int, ...] | None = None
    node_features: np.ndarray | None = field(default=None, compare=False, repr=False)
    edge_features: np.ndarray | None = field(default=None, compare=False, repr=False)
    graph_id: str = ""

    def __post_init__(self) -> None:
        n = int(self.num_nodes)
        if n < 0:
            raise GraphValidationError(f"graph {self.graph_id!r}: negative node count {n}")
        canon = []
        seen = set()
        for e in self.edges:
            i, j = int(e[0]), int(e[1])
            if i == j:
                raise GraphValidationError(f"graph {self.graph_id!r}: self-loop on node {i} (edge [{i}, {j}])")
            if not (0 <= i < n and 0 <= j < n):
                raise GraphValidationError(f"graph {self.graph_id!r}: edge [{i}, {j}] endpoint out of range for {n} nodes")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise GraphValidationError(f"graph {self.graph_id!r}: duplicate edge [{i}, {j}]")
            seen.add(key)
            canon.append(key)
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "edges", tuple(canon))

        if self.node_labels is not None:
            labels = tuple(int(x) for x in self.node_labels)
            if len(labels) != n:
                raise GraphValidationError(f"graph {self.graph_id!r}: {len(labels)} labels for {n} nodes")
            object.__setattr__(self, "node_labels", labels)

        if self.node_features is None:
            x = np.ones((n, 1))
        else:
            x = np.array(self.node_features, dtype=np.float64)
            if x.ndim != 2 or x.shape[0] != n:
                raise GraphValidationError(f"graph {self.graph_id!r}: node features shape {x.shape} but N={n}")
        object.__setattr__(self, "node_features", _freeze(x))

        m = len(canon)
        if self.edge_features is None:
            y = np.ones((m, 1))
        else:
            y = np.array(self.edge_features, dtype=np.float64)
            if y.ndim != 2 or y.shape[0] != m:
                raise GraphValidationError(f"graph {self.graph_id!r}: edge features shape {y.shape} but M={m}")
        object.__setattr__(self, "edge_features", _freeze(y))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        d = np.zeros(self.num_nodes, dtype=np.int64)
        for i, j in self.edges:
            d[i] += 1
            d[j] += 1
        return d

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def incidence(self) -> np.ndarray:
        k = np.zeros((self.num_nodes, self.num_edges))
        for e, (i, j) in enumerate(self.edges):
            k[i, e] = k[j, e] = 1.0
        return k

    def labels_or_zero(self) -> tuple[int, ...]:
        return self.node_labels if self.node_labels is not None else (0,) * self.num_nodes

    def permuted(self, perm: Sequence[int], graph_id: str | None = None) -> "NodeGraph":
        """Relabel nodes so that old node ``i`` becomes ``perm[i]``."""
        perm = list(perm)
        if sorted(perm) != list(range(self.num_nodes)):
            raise ValueError("perm must be a permutation of range(num_nodes)")
        inv = np.argsort(perm)
        labels = None if self.node_labels is None else tuple(self.node_labels[k] for k in inv)
        edges = [(perm[i], perm[j]) for i, j in self.edges]
        order = sorted(range(len(edges)), key=lambda e: (min(edges[e]), max(edges[e])))
        return NodeGraph(
            self.num_nodes,
            tuple(edges[e] for e in order),
            labels,
            self.node_features[inv],
            self.edge_features[order],
            self.graph_id if graph_id is None else graph_id,
        )


@dataclass(frozen=True)
class LineGraph:
    base: NodeGraph
    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    shared_node: tuple[int, ...]  # base node shared by each line-graph edge
    node_features: np.ndarray = field(compare=False, repr=False)
    edge_features: np.ndarray = field(compare=False, repr=False)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def incidence(self) -> np.ndarray:
        k = np.zeros((self.num_nodes, self.num_edges))
        for e, (i, j) in enumerate(self.edges):
            k[i, e] = k[j, e] = 1.0
        return k


@dataclass(frozen=True)
class AssignmentGraph:
    n1: int
    n2: int
    edges: tuple[tuple[int, int], ...]  # node (i, a) has index i * n2 + a
    degrees: np.ndarray = field(compare=False, repr=False)

    @property
    def num_nodes(self) -> int:
        return self.n1 * self.n2

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def index(self, i: int, a: int) -> int:
        return i * self.n2 + a


def build_line_graph(g: NodeGraph) -> LineGraph:
    incident: list[list[int]] = [[] for _ in range(g.num_nodes)]
    for e, (i, j) in enumerate(g.edges):
        incident[i].append(e)
        incident[j].append(e)
    edges = []
    shared = []
    for v in range(g.num_nodes):
        inc = incident[v]
        for p in range(len(inc)):
            for q in range(p + 1, len(inc)):
                edges.append((inc[p], inc[q]))
                shared.append(v)
    x = g.node_features
    if g.num_edges:
        ends = np.array(g.edges)
        xe = x[ends[:, 0]] + x[ends[:, 1]]
    else:
        xe = np.zeros((0, x.shape[1]))
    ye = x[np.array(shared, dtype=np.int64)] if shared else np.zeros((0, x.shape[1]))
    return LineGraph(g, g.num_edges, tuple(edges), tuple(shared), _freeze(xe), _freeze(ye))


def build_assignment_graph(g1: NodeGraph, g2: NodeGraph) -> AssignmentGraph:
    n2 = g2.num_nodes
    edges = []
    for i, j in g1.edges:
        for a, b in g2.edges:
            edges.append((i * n2 + a, j * n2 + b))
            edges.append((i * n2 + b, j * n2 + a))
    deg = np.zeros(g1.num_nodes * n2, dtype=np.int64)
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    return AssignmentGraph(g1.num_nodes, n2, tuple(edges), _freeze(deg))


def modified_incidence(g: NodeGraph) -> np.ndarray:
    """Incidence matrix with entries (d_i d_j)^-1/2 for edge {i, j}."""
    d = g.degrees().astype(np.float64)
    k = np.zeros((g.num_nodes, g.num_edges))
    for e, (i, j) in enumerate(g.edges):
        k[i, e] = k[j, e] = 1.0 / np.sqrt(d[i] * d[j])
    return k


def sym_normalize(adj: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """D̃^-1/2 (A + I) D̃^-1/2, with the self-loop only on ``valid`` nodes.

    Works on a single matrix or a stack of matrices (leading batch axes).
    Padded nodes get an all-zero row and column.
    """
    n = adj.shape[-1]
    if valid is None:
        valid = np.ones(adj.shape[:-1], dtype=bool)
    a = adj + np.eye(n) * valid[..., None]
    deg = a.sum(-1)
    inv = np.zeros_like(deg)
    np.divide(1.0, np.sqrt(deg), out=inv, where=deg > 0)
    return inv[..., :, None] * a * inv[..., None, :]


def normalized_adjacency(g: NodeGraph) -> np.ndarray:
    return sym_normalize(g.adjacency())


def assignment_adjacency(ag: AssignmentGraph) -> np.ndarray:
    a = np.zeros((ag.num_nodes, ag.num_nodes))
    for u, v in ag.edges:
        a[u, v] = a[v, u] = 1.0
    return a


# --------------------------------------------------------------------------
# record format


def graph_to_record(g: NodeGraph, vocab: Sequence[str] | None = None) -> dict[str, Any]:
    rec: dict[str, Any] = {"id": g.graph_id, "num_nodes": g.num_nodes}
    if g.node_labels is not None:
        rec["node_labels"] = [vocab[x] for x in g.node_labels] if vocab else list(g.node_labels)
    rec["edges"] = [list(e) for e in g.edges]
    return rec


def graph_from_record(rec: dict[str, Any], vocab: Sequence[str] | None = None, source: str = "") -> NodeGraph:
    where = f"{source}: " if source else ""
    try:
        gid = str(rec["id"])
        edges = [tuple(e) for e in rec["edges"]]
    except (KeyError, TypeError) as exc:
        raise GraphValidationError(f"{where}malformed graph record ({exc})") from None
    if any(len(e) != 2 for e in edges):
        raise GraphValidationError(f"{where}graph {gid!r}: every edge must be a pair")
    raw = rec.get("node_labels")
    n = rec.get("num_nodes")
    if n is None:
        if raw is not None:
            n = len(raw)
        else:
            n = 1 + max((max(e) for e in edges), default=-1)
    labels = None
    if raw is not None:
        if vocab is not None:
            lookup = {tok: k for k, tok in enumerate(vocab)}
            unknown = [tok for tok in raw if tok not in lookup]
            if unknown:
                raise GraphValidationError(f"{where}graph {gid!r}: unknown node label {unknown[0]!r}")
            labels = tuple(lookup[tok] for tok in raw)
        else:
            labels = tuple(int(t) for t in raw)
    try:
        return NodeGraph(int(n), tuple(edges), labels, graph_id=gid)
    except GraphValidationError as exc:
        raise GraphValidationError(f"{where}{exc}") from None


def load_graph_file(path: str | Path, vocab: Sequence[str] | None = None) -> NodeGraph:
    path = Path(path)
    try:
        rec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise GraphValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return graph_from_record(rec, vocab, source=str(path))


def adjacency_dump(adj: np.ndarray) -> str:
    """Readable 0/1 grid, one row per line."""
    return "\n".join(" ".join("1" if v else "." for v in row) for row in np.asarray(adj) != 0)


def line_graph_record(lg: LineGraph) -> dict[str, Any]:
    base = lg.base
    return {
        "id": f"{base.graph_id}:line",
        "num_nodes": lg.num_nodes,
        "edges": [list(e) for e in lg.edges],
        "node_origin": [list(e) for e in base.edges],
        "edge_shared_node": list(lg.shared_node),
    }


def assignment_graph_record(ag: AssignmentGraph, g1: NodeGraph, g2: NodeGraph) -> dict[str, Any]:
    return {
        "id": f"{g1.graph_id}x{g2.graph_id}:assignment",
        "num_nodes": ag.num_nodes,
        "edges": [list(e) for e in ag.edges],
        "node_pairs": [[i, a] for i in range(ag.n1) for a in range(ag.n2)],
        "degrees": ag.degrees.tolist(),
    }


def expected_line_edge_count(g: NodeGraph) -> int:
    return int(sum(comb(int(d), 2) for d in g.degrees()))
