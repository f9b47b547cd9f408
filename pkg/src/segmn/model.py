"""Model assembly: padded batch preparation, SEGMN, and a GraphSim-style stub."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncoderParams, GraphArrays, encode_batch, graph_arrays, stack_arrays
from .graphs import NodeGraph, expected_line_edge_count
from .matcher import (
    MatcherParams,
    assignment_operator,
    cross_conv_readout,
    pair_mask,
    conv_features,
    similarity_pair,
    spm_layer,
)

VARIANTS = ("node", "edge", "dual")


@dataclass
class ModelConfig:
    variant: str = "dual"
    d: int = 64
    layers: int = 3
    dk: int = 64
    spm_layers: int = 1
    conv_channels: tuple[int, ...] = (16, 16)
    att_dim: int = 16
    label_count: int = 0
    n_max: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.spm_layers < 0:
            raise ValueError("spm_layers must be >= 0")
        self.conv_channels = tuple(int(c) for c in self.conv_channels)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["conv_channels"] = list(self.conv_channels)
        return out


class FeatureCache:
    """Per-graph padded arrays, computed once per graph id."""

    def __init__(self, graphs: Iterable[NodeGraph], label_count: int, n_max: int):
        graphs = list(graphs)
        self.label_count = label_count
        self.n_max = n_max
        self.m_max = max([g.num_edges for g in graphs] + [1])
        self.me_max = max([expected_line_edge_count(g) for g in graphs] + [1])
        self._graphs = {g.graph_id: g for g in graphs}
        self._arrays: dict[str, GraphArrays] = {}

    def __getitem__(self, g: NodeGraph | str) -> GraphArrays:
        gid = g if isinstance(g, str) else g.graph_id
        arr = self._arrays.get(gid)
        if arr is None:
            graph = self._graphs[gid] if isinstance(g, str) else g
            arr = graph_arrays(graph, self.label_count, self.n_max, self.m_max, self.me_max)
            self._arrays[gid] = arr
        return arr


@dataclass
class PairBatch:
    g1: dict[str, np.ndarray]
    g2: dict[str, np.ndarray]
    n1: np.ndarray
    n2: np.ndarray
    _ops: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.n1)

    @property
    def mask12(self) -> np.ndarray:
        return pair_mask(self.g1["valid"], self.g2["valid"])

    @property
    def mask21(self) -> np.ndarray:
        return pair_mask(self.g2["valid"], self.g1["valid"])

    def assignment_ops(self) -> tuple[np.ndarray, np.ndarray]:
        if "ops" not in self._ops:
            a, b = self.g1, self.g2
            self._ops["ops"] = (
                assignment_operator(a["adj"], b["adj"], a["valid"], b["valid"]),
                assignment_operator(b["adj"], a["adj"], b["valid"], a["valid"]),
            )
        return self._ops["ops"]


def make_batch(pairs: Sequence[tuple[NodeGraph, NodeGraph]], cache: FeatureCache) -> PairBatch:
    a1 = [cache[g1] for g1, _ in pairs]
    a2 = [cache[g2] for _, g2 in pairs]
    return PairBatch(stack_arrays(a1), stack_arrays(a2), np.array([a.n for a in a1]), np.array([a.n for a in a2]))


class SEGMN:
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        in_dim = max(config.label_count, 1)
        width = 2 * config.d if config.variant == "dual" else config.d
        self.encoder = EncoderParams(in_dim, config.d, config.layers, rng)
        self.matcher = MatcherParams(width, config.dk, config.spm_layers, config.conv_channels, rng, config.att_dim)

    def params(self) -> dict[str, Tensor]:
        out = self.encoder.named()
        out.update(self.matcher.named())
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.params()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"checkpoint shape {state[k].shape} for {k!r}, model expects {p.shape}")
            p.values = np.array(state[k], dtype=np.float64)

    def similarity(self, batch: PairBatch) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """(S1, S2, S1', S2'): before and after SPM."""
        v = self.config.variant
        h1 = encode_batch(batch.g1, self.encoder, v)
        h2 = encode_batch(batch.g2, self.encoder, v)
        s1, s2 = similarity_pair(h1, h2, batch.g1["valid"], batch.g2["valid"], self.matcher)
        t1, t2 = s1, s2
        if self.matcher.WA:
            op12, op21 = batch.assignment_ops()
            for wa in self.matcher.WA:
                t1 = spm_layer(t1, op12, wa)
                t2 = spm_layer(t2, op21, wa)
        return s1, s2, t1, t2

    def forward(self, batch: PairBatch) -> Tensor:
        _, _, t1, t2 = self.similarity(batch)
        out = cross_conv_readout(t1, batch.mask12, t2, batch.mask21, self.matcher)
        return ad.reshape(out, (len(batch),))

    __call__ = forward


@dataclass
class GraphSimConfig:
    d: int = 64
    layers: int = 3
    spm_positions: tuple[int, ...] = ()
    conv_channels: tuple[int, ...] = (16, 16)
    label_count: int = 0
    n_max: int = 10
    seed: int = 0

    def __post_init__(self):
        self.spm_positions = tuple(sorted(set(int(p) for p in self.spm_positions)))
        bad = [p for p in self.spm_positions if not 1 <= p <= self.layers]
        if bad:
            raise ValueError(f"SPM positions must lie in 1..{self.layers}, got {bad}")
        self.conv_channels = tuple(int(c) for c in self.conv_channels)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["spm_positions"] = list(self.spm_positions)
        out["conv_channels"] = list(self.conv_channels)
        return out


class GraphSimStub:
    """Plain residual GCN; after every layer a similarity matrix
    softmax(H1 H2ᵀ/√d) is read out by its own cross-conv stack and the pooled
    features of all layers feed a one-layer MLP. SPM layers can be inserted
    after any GCN layer.
    """

    def __init__(self, config: GraphSimConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.encoder = EncoderParams(max(config.label_count, 1), config.d, config.layers, rng)
        self.wa = {pos: Tensor(np.ones((1, 1)), requires_grad=True) for pos in config.spm_positions}
        heads = [MatcherParams(1, 1, 0, config.conv_channels, rng) for _ in range(config.layers)]
        self.convs = [h.conv for h in heads]
        width = 2 * config.conv_channels[-1] * config.layers
        self.mlp_w = Tensor(rng.normal(0.0, 1.0 / np.sqrt(width), size=(width, 1)), requires_grad=True)
        self.mlp_b = Tensor(np.zeros(1), requires_grad=True)
        self.spm_executions = 0

    def params(self) -> dict[str, Tensor]:
        out = {"enc.P_node": self.encoder.P_node}
        for l, w in enumerate(self.encoder.W):
            out[f"enc.ng.W.{l}"] = w
        for pos, wa in self.wa.items():
            out[f"spm.WA.after{pos}"] = wa
        for l, conv in enumerate(self.convs):
            for c, layer in enumerate(conv):
                for k, t in layer.items():
                    out[f"gs.{l}.conv.{c}.{k}"] = t
        out["mlp.w"] = self.mlp_w
        out["mlp.b"] = self.mlp_b
        return out

    def forward(self, batch: PairBatch) -> Tensor:
        a, b = batch.g1, batch.g2
        h1 = ad.as_tensor(a["x"]) @ self.encoder.P_node
        h2 = ad.as_tensor(b["x"]) @ self.encoder.P_node
        mask = batch.mask12
        c = 1.0 / np.sqrt(self.config.d)
        feats = []
        for l, w in enumerate(self.encoder.W):
            h1 = ad.relu(ad.as_tensor(a["a_norm"]) @ (h1 @ w)) + h1
            h2 = ad.relu(ad.as_tensor(b["a_norm"]) @ (h2 @ w)) + h2
            s = ad.row_softmax_masked(ad.scale(h1 @ ad.transpose(h2), c), mask)
            wa = self.wa.get(l + 1)
            if wa is not None:
                s = spm_layer(s, batch.assignment_ops()[0], wa)
                self.spm_executions += 1
            feats.append(conv_features(s, mask, self.convs[l]))
        f = ad.concat_cols(*feats)
        return ad.reshape(ad.sigmoid(f @ self.mlp_w + self.mlp_b), (len(batch),))

    __call__ = forward
