"""Dual embedding: edge-enhanced GCN on the line graph, residual GCN on the
node graph, and degree-weighted aggregation of edge embeddings onto nodes.

Everything works on padded, batched arrays (leading batch axis). Padded
nodes/edges carry zero features and zero rows in every propagation matrix, so
they stay exactly zero through the stack.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import NodeGraph, build_line_graph, modified_incidence, sym_normalize


def node_input_features(g: NodeGraph, label_count: int) -> np.ndarray:
    """One-hot labels, or a constant 1.0 column for unlabeled data."""
    if label_count <= 0:
        return np.ones((g.num_nodes, 1))
    x = np.zeros((g.num_nodes, label_count))
    x[np.arange(g.num_nodes), list(g.labels_or_zero())] = 1.0
    return x


@dataclass(frozen=True)
class GraphArrays:
    """Padded numpy operands of one graph."""

    n: int
    m: int
    x: np.ndarray  # (n_pad, d1)
    adj: np.ndarray  # (n_pad, n_pad) raw 0/1
    a_norm: np.ndarray  # (n_pad, n_pad)
    valid: np.ndarray  # (n_pad,) bool
    kprime: np.ndarray  # (n_pad, m_pad)
    xe: np.ndarray  # (m_pad, d1)
    ae_norm: np.ndarray  # (m_pad, m_pad)
    ke: np.ndarray  # (m_pad, me_pad)
    ye: np.ndarray  # (me_pad, d1)


def _pad(a: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    out = np.zeros(shape, dtype=a.dtype)
    out[tuple(slice(0, s) for s in a.shape)] = a
    return out


def graph_arrays(g: NodeGraph, label_count: int, n_pad: int, m_pad: int, me_pad: int) -> GraphArrays:
    x = node_input_features(g, label_count)
    gf = replace(g, node_features=x)
    lg = build_line_graph(gf)
    n, m, me = g.num_nodes, g.num_edges, lg.num_edges
    if n > n_pad or m > m_pad or me > me_pad:
        raise ValueError(f"graph {g.graph_id!r} ({n} nodes, {m} edges, {me} line edges) exceeds padding ({n_pad}, {m_pad}, {me_pad})")
    d1 = x.shape[1]
    adj = _pad(g.adjacency(), (n_pad, n_pad))
    valid = np.arange(n_pad) < n
    e_valid = np.arange(m_pad) < m
    return GraphArrays(
        n=n,
        m=m,
        x=_pad(x, (n_pad, d1)),
        adj=adj,
        a_norm=sym_normalize(adj, valid),
        valid=valid,
        kprime=_pad(modified_incidence(g), (n_pad, m_pad)),
        xe=_pad(lg.node_features, (m_pad, d1)),
        ae_norm=sym_normalize(_pad(lg.adjacency(), (m_pad, m_pad)), e_valid),
        ke=_pad(lg.incidence(), (m_pad, me_pad)),
        ye=_pad(lg.edge_features, (me_pad, d1)),
    )


def stack_arrays(items: list[GraphArrays]) -> dict[str, np.ndarray]:
    return {k: np.stack([getattr(it, k) for it in items]) for k in ("x", "adj", "a_norm", "valid", "kprime", "xe", "ae_norm", "ke", "ye")}


class EncoderParams:
    def __init__(self, in_dim: int, d: int = 64, layers: int = 3, rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_dim, self.d, self.layers = in_dim, d, layers

        def w(rows, cols, gain=1.0):
            return Tensor(rng.normal(0.0, gain / np.sqrt(rows), size=(rows, cols)), requires_grad=True)

        self.P_node = w(in_dim, d)
        self.P_line = w(in_dim, d)
        self.W2 = w(in_dim, d)
        self.b = Tensor(np.zeros(d), requires_grad=True)
        self.gate = Tensor(np.full(d, 0.5), requires_grad=True)
        self.W_E = [w(d, d, 0.5) for _ in range(layers)]
        self.W = [w(d, d, 0.5) for _ in range(layers)]

    def named(self) -> dict[str, Tensor]:
        out = {"enc.P_node": self.P_node, "enc.P_line": self.P_line, "enc.W2": self.W2, "enc.b": self.b, "enc.gate": self.gate}
        for l, t in enumerate(self.W_E):
            out[f"enc.lg.W_E.{l}"] = t
        for l, t in enumerate(self.W):
            out[f"enc.ng.W.{l}"] = t
        return out


def residual_gcn(h: Tensor, a_norm, weights: list[Tensor], extra: Tensor | None = None) -> Tensor:
    """Per layer: relu(Â H W) + H (+ extra)."""
    a_norm = ad.as_tensor(a_norm)
    for w in weights:
        h = ad.relu(a_norm @ (h @ w)) + h
        if extra is not None:
            h = h + extra
    return h


def edge_message(ke, ye, p: EncoderParams) -> Tensor:
    """Incidence-routed tanh edge features, gated per channel."""
    t = ad.tanh(ad.as_tensor(ye) @ p.W2 + p.b)
    return ad.hadamard(ad.as_tensor(ke) @ t, p.gate)


def edge_embed_arrays(xe, ae_norm, ke, ye, p: EncoderParams) -> Tensor:
    h = ad.as_tensor(xe) @ p.P_line
    return residual_gcn(h, ae_norm, p.W_E, extra=edge_message(ke, ye, p))


def node_embed_arrays(x, a_norm, p: EncoderParams) -> Tensor:
    return residual_gcn(ad.as_tensor(x) @ p.P_node, a_norm, p.W)


def dual_embed_arrays(hv: Tensor, he: Tensor, kprime) -> Tensor:
    return ad.concat_cols(hv, ad.as_tensor(kprime) @ he)


def encode_batch(arr: dict[str, np.ndarray], p: EncoderParams, variant: str = "dual") -> Tensor:
    """Node representations fed to matching, per ablation variant."""
    if variant not in ("node", "edge", "dual"):
        raise ValueError(f"unknown variant {variant!r}")
    hv = node_embed_arrays(arr["x"], arr["a_norm"], p) if variant != "edge" else None
    if variant == "node":
        return hv
    he = edge_embed_arrays(arr["xe"], arr["ae_norm"], arr["ke"], arr["ye"], p)
    agg = ad.as_tensor(arr["kprime"]) @ he
    return agg if variant == "edge" else ad.concat_cols(hv, agg)


# --------------------------------------------------------------------------
# single-graph conveniences


@dataclass(frozen=True)
class DualEmbedding:
    node_part: np.ndarray  # N x d
    edge_part: np.ndarray  # N x d

    @property
    def H(self) -> np.ndarray:
        return np.concatenate([self.node_part, self.edge_part], axis=1)


def _single(g: NodeGraph, label_count: int) -> GraphArrays:
    lgm = sum(int(d) * (int(d) - 1) // 2 for d in g.degrees())
    return graph_arrays(g, label_count, g.num_nodes, g.num_edges, lgm)


def edge_embed(g: NodeGraph, p: EncoderParams, label_count: int = 0) -> np.ndarray:
    a = _single(g, label_count)
    return edge_embed_arrays(a.xe, a.ae_norm, a.ke, a.ye, p).values


def node_embed(g: NodeGraph, p: EncoderParams, label_count: int = 0) -> np.ndarray:
    a = _single(g, label_count)
    return node_embed_arrays(a.x, a.a_norm, p).values


def dual_embed(g: NodeGraph, hv: np.ndarray, he: np.ndarray) -> DualEmbedding:
    return DualEmbedding(np.asarray(hv), modified_incidence(g) @ np.asarray(he))
