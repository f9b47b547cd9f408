"""Cross-graph similarity, structure perception matching (SPM) and readout.

Similarity matrices are always ``(B, N_max, N_max)`` with a boolean mask of
real node pairs; everything outside the mask is exactly zero at every stage.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import AssignmentGraph, NodeGraph, assignment_adjacency, sym_normalize

# instrumentation: how many times an SPM layer has run in this process
CALLS: Counter = Counter()


@dataclass(frozen=True)
class SimilarityMatrix:
    scores: np.ndarray  # (N_max, N_max)
    mask: np.ndarray  # (N_max, N_max) bool
    n1: int
    n2: int

    @property
    def block(self) -> np.ndarray:
        return self.scores[: self.n1, : self.n2]


def pair_mask(valid1: np.ndarray, valid2: np.ndarray) -> np.ndarray:
    return valid1[..., :, None] & valid2[..., None, :]


class MatcherParams:
    def __init__(
        self,
        in_dim: int,
        dk: int = 64,
        spm_layers: int = 1,
        conv_channels: tuple[int, ...] = (16, 16),
        rng: np.random.Generator | None = None,
        att_dim: int = 16,
    ):
        rng = np.random.default_rng(1) if rng is None else rng
        self.in_dim, self.dk = in_dim, dk

        def w(rows, cols, gain=1.0):
            return Tensor(rng.normal(0.0, gain / np.sqrt(rows), size=(rows, cols)), requires_grad=True)

        def zeros(*shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        self.Wq1, self.Wk1, self.Wq2, self.Wk2 = (w(in_dim, dk) for _ in range(4))
        self.WA = [Tensor(np.ones((1, 1)), requires_grad=True) for _ in range(spm_layers)]
        # flattened self-attention: scalar tokens lifted to att_dim
        self.att = {
            "wq": w(1, att_dim),
            "bq": Tensor(rng.normal(0.0, 1.0, size=att_dim), requires_grad=True),
            "wk": w(1, att_dim),
            "bk": Tensor(rng.normal(0.0, 1.0, size=att_dim), requires_grad=True),
            "wv": w(1, att_dim),
            "bv": zeros(att_dim),
            "wo": w(att_dim, 1),
            "bo": zeros(1),
        }
        self.conv = []
        cin = 1
        for cout in conv_channels:
            self.conv.append({"center": w(cin, cout), "row": w(cin, cout, 0.5), "col": w(cin, cout, 0.5), "bias": zeros(cout)})
            cin = cout
        self.mlp_w = w(4 * cin, 1)
        self.mlp_b = zeros(1)

    def named(self) -> dict[str, Tensor]:
        out = {"match.Wq1": self.Wq1, "match.Wk1": self.Wk1, "match.Wq2": self.Wq2, "match.Wk2": self.Wk2}
        for l, t in enumerate(self.WA):
            out[f"spm.WA.{l}"] = t
        for k, t in self.att.items():
            out[f"att.{k}"] = t
        for l, layer in enumerate(self.conv):
            for k, t in layer.items():
                out[f"conv.{l}.{k}"] = t
        out["mlp.w"] = self.mlp_w
        out["mlp.b"] = self.mlp_b
        return out


# --------------------------------------------------------------------------
# cross-graph interaction


def similarity_pair(h1: Tensor, h2: Tensor, valid1, valid2, p: MatcherParams) -> tuple[Tensor, Tensor]:
    """S1 = softmax(Q1 K2ᵀ/√dk), S2 = softmax(Q2 K1ᵀ/√dk), masked and zero padded."""
    q1, k1 = h1 @ p.Wq1, h1 @ p.Wk1
    q2, k2 = h2 @ p.Wq2, h2 @ p.Wk2
    c = 1.0 / np.sqrt(p.dk)
    s1 = ad.row_softmax_masked(ad.scale(q1 @ ad.transpose(k2), c), pair_mask(valid1, valid2))
    s2 = ad.row_softmax_masked(ad.scale(q2 @ ad.transpose(k1), c), pair_mask(valid2, valid1))
    return s1, s2


def cross_graph_similarity(h1: np.ndarray, h2: np.ndarray, p: MatcherParams, n_max: int) -> tuple[SimilarityMatrix, SimilarityMatrix]:
    n1, n2 = len(h1), len(h2)
    if n1 > n_max or n2 > n_max:
        raise ValueError(f"graph sizes ({n1}, {n2}) exceed N_max={n_max}")
    H1 = np.zeros((n_max, h1.shape[1]))
    H1[:n1] = h1
    H2 = np.zeros((n_max, h2.shape[1]))
    H2[:n2] = h2
    v1, v2 = np.arange(n_max) < n1, np.arange(n_max) < n2
    s1, s2 = similarity_pair(Tensor(H1), Tensor(H2), v1, v2, p)
    return SimilarityMatrix(s1.values, pair_mask(v1, v2), n1, n2), SimilarityMatrix(s2.values, pair_mask(v2, v1), n2, n1)


# --------------------------------------------------------------------------
# structure perception matching


def assignment_operator(adj1: np.ndarray, adj2: np.ndarray, valid1: np.ndarray, valid2: np.ndarray) -> np.ndarray:
    """Normalized (A_A + I) over padded pair indices i * N_max + a.

    The assignment adjacency is the Kronecker product of the two adjacency
    matrices; batched over a leading axis when inputs are stacked.
    """
    n = adj1.shape[-1]
    aa = np.einsum("...ij,...ab->...iajb", adj1, adj2).reshape(adj1.shape[:-2] + (n * n, n * n))
    return sym_normalize(aa, pair_mask(valid1, valid2).reshape(adj1.shape[:-2] + (n * n,)))


def assignment_operator_from_graph(ag: AssignmentGraph, n_max: int) -> np.ndarray:
    """Same operator built from an explicit AssignmentGraph, padded to N_max."""
    idx = np.array([i * n_max + a for i in range(ag.n1) for a in range(ag.n2)], dtype=np.int64)
    full = np.zeros((n_max * n_max, n_max * n_max))
    full[np.ix_(idx, idx)] = assignment_adjacency(ag)
    valid = np.zeros(n_max * n_max, dtype=bool)
    valid[idx] = True
    return sym_normalize(full, valid)


def spm_layer(s: Tensor, op, wa: Tensor) -> Tensor:
    """relu(Â_A x W_A) with x the flattened similarity scores."""
    CALLS["spm"] += 1
    shape = s.shape
    n2 = shape[-1] * shape[-2]
    x = ad.reshape(s, shape[:-2] + (n2, 1))
    out = ad.relu(ad.as_tensor(op) @ x @ wa)
    return ad.reshape(out, shape)


def spm_apply(S: SimilarityMatrix, ag: AssignmentGraph, p: MatcherParams, layer: int = 0) -> SimilarityMatrix:
    if (ag.n1, ag.n2) != (S.n1, S.n2):
        raise ValueError(f"assignment graph is {ag.n1}x{ag.n2} but similarity matrix is {S.n1}x{S.n2}")
    op = assignment_operator_from_graph(ag, S.scores.shape[0])
    out = spm_layer(Tensor(S.scores), op, p.WA[layer])
    return SimilarityMatrix(out.values, S.mask, S.n1, S.n2)


def brute_force_spm(S: SimilarityMatrix, g1: NodeGraph, g2: NodeGraph, wa: float) -> SimilarityMatrix:
    """Per-pair loop: gather structurally related pairs and aggregate them.

    For pair (i, a) the related set is every (j, b) with {i, j} in E1 and
    {a, b} in E2, plus (i, a) itself. Each message is weighted by
    1/sqrt(deg(i, a) deg(j, b)) with degrees counting the self pair.
    """
    nbr1 = [[] for _ in range(g1.num_nodes)]
    for i, j in g1.edges:
        nbr1[i].append(j)
        nbr1[j].append(i)
    nbr2 = [[] for _ in range(g2.num_nodes)]
    for a, b in g2.edges:
        nbr2[a].append(b)
        nbr2[b].append(a)

    def related(i, a):
        return [(j, b) for j in nbr1[i] for b in nbr2[a]] + [(i, a)]

    out = np.zeros_like(S.scores)
    for i in range(g1.num_nodes):
        for a in range(g2.num_nodes):
            deg_ia = len(nbr1[i]) * len(nbr2[a]) + 1
            msg = 0.0
            for j, b in related(i, a):
                deg_jb = len(nbr1[j]) * len(nbr2[b]) + 1
                msg += S.scores[j, b] / np.sqrt(deg_ia * deg_jb)
            out[i, a] = max(msg * wa, 0.0)
    return SimilarityMatrix(out, S.mask, S.n1, S.n2)


# --------------------------------------------------------------------------
# similarity matrix learning


def matrix_self_attention(s: Tensor, mask: np.ndarray, att: dict[str, Tensor]) -> Tensor:
    """Scaled dot-product attention over the N_max² scalar entries.

    Padded entries are excluded as keys and reset to zero on output; a
    residual connection adds the attended value back to each entry.
    """
    shape = s.shape
    L = shape[-1] * shape[-2]
    dk = att["wq"].shape[1]
    x = ad.reshape(s, shape[:-2] + (L, 1))
    tok = mask.reshape(mask.shape[:-2] + (L,))
    q = x @ att["wq"] + att["bq"]
    k = x @ att["wk"] + att["bk"]
    v = x @ att["wv"] + att["bv"]
    logits = ad.scale(q @ ad.transpose(k), 1.0 / np.sqrt(dk))
    w = ad.row_softmax_masked(logits, np.broadcast_to(pair_mask(tok, tok), logits.shape))
    out = (w @ v) @ att["wo"] + att["bo"]
    out = ad.hadamard(x + out, tok[..., None].astype(np.float64))
    return ad.reshape(out, shape)


def cross_conv(t: Tensor, mask_f: np.ndarray, layer: dict[str, Tensor]) -> Tensor:
    """Cross-shaped filter on a (B, N, N, C) grid.

    Each output cell mixes its own value, the sum of its row and the sum of
    its column; weights are shared along the row/column so the layer is
    equivariant to node relabeling. Sums (not means) keep the graph sizes
    visible to the readout. Padded cells are zeroed.
    """
    row = ad.sum(t, axis=-2, keepdims=True)
    col = ad.sum(t, axis=-3, keepdims=True)
    f = t @ layer["center"] + row @ layer["row"] + col @ layer["col"] + layer["bias"]
    return ad.hadamard(ad.relu(f), mask_f)


def conv_features(s: Tensor, mask: np.ndarray, conv: list[dict[str, Tensor]]) -> Tensor:
    """Cross-conv stack then masked mean/max pooling -> (B, 2C)."""
    mask_f = mask[..., None].astype(np.float64)
    t = ad.reshape(s, s.shape + (1,))
    for layer in conv:
        t = cross_conv(t, mask_f, layer)
    count = mask.sum(axis=(-1, -2)).astype(np.float64)
    inv = np.divide(1.0, count, out=np.zeros_like(count), where=count > 0)
    mean = ad.hadamard(ad.sum(t, axis=(-3, -2)), inv[..., None])
    # relu output is >= 0 and padding is 0, so the plain max is the masked max
    mx = ad.max_pool(t, axis=(-3, -2))
    return ad.concat_cols(mean, mx)


def readout_features(s: Tensor, mask: np.ndarray, p: MatcherParams) -> Tensor:
    return conv_features(matrix_self_attention(s, mask, p.att), mask, p.conv)


def cross_conv_readout(s1: Tensor, mask1: np.ndarray, s2: Tensor, mask2: np.ndarray, p: MatcherParams) -> Tensor:
    f = ad.concat_cols(readout_features(s1, mask1, p), readout_features(s2, mask2, p))
    return ad.sigmoid(f @ p.mlp_w + p.mlp_b)
