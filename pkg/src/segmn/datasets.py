"""Corpus IO, synthetic corpus generation, exact labeling and pair streams.

On-disk layout of a dataset directory::

    manifest.json        {"name", "label_vocab", "split": {"train": [...], "test": [...]}}
    graphs/<id>.json     {"id", "node_labels"?, "edges": [[i, j], ...]}
    labels.txt           "id_i id_j ged" per line (optional label cache)
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .ged import UNIT_COSTS, exact_ged_astar, normalized_target
from .graphs import GraphValidationError, NodeGraph, graph_from_record, graph_to_record

log = logging.getLogger(__name__)


class CorpusError(ValueError):
    pass


class LabelCacheMiss(KeyError):
    pass


def _key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass
class Corpus:
    graphs: list[NodeGraph]
    label_vocab: list[str] = field(default_factory=list)
    train_ids: list[str] = field(default_factory=list)
    test_ids: list[str] = field(default_factory=list)
    name: str = "corpus"
    label_cache: dict[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.graphs:
            raise CorpusError("no graphs in corpus")
        self.by_id = {g.graph_id: g for g in self.graphs}
        if len(self.by_id) != len(self.graphs):
            raise CorpusError("duplicate graph ids")
        if not self.train_ids and not self.test_ids:
            self.train_ids = [g.graph_id for g in self.graphs]
        split = self.train_ids + self.test_ids
        if len(set(split)) != len(split):
            raise CorpusError("train/test split overlaps")
        if set(split) != set(self.by_id):
            raise CorpusError("train/test split does not cover exactly the corpus graphs")
        for g in self.graphs:
            if g.node_labels is not None and self.label_vocab and max(g.node_labels, default=0) >= len(self.label_vocab):
                raise CorpusError(f"graph {g.graph_id!r} uses a label id outside the vocabulary")

    @property
    def n_max(self) -> int:
        return max(g.num_nodes for g in self.graphs)

    @property
    def label_count(self) -> int:
        return len(self.label_vocab)

    @property
    def train(self) -> list[NodeGraph]:
        return [self.by_id[i] for i in self.train_ids]

    @property
    def test(self) -> list[NodeGraph]:
        return [self.by_id[i] for i in self.test_ids]

    def ged(self, a: str, b: str) -> float:
        if a == b:
            return 0.0
        try:
            return self.label_cache[_key(a, b)]
        except KeyError:
            raise LabelCacheMiss(f"no GED label for pair ({a}, {b})") from None

    def target(self, a: str, b: str) -> float:
        ga, gb = self.by_id[a], self.by_id[b]
        return normalized_target(self.ged(a, b), ga.num_nodes, gb.num_nodes)


# --------------------------------------------------------------------------
# disk IO


def save_corpus(c: Corpus, path: str | Path) -> None:
    path = Path(path)
    (path / "graphs").mkdir(parents=True, exist_ok=True)
    manifest = {"name": c.name, "label_vocab": c.label_vocab, "split": {"train": c.train_ids, "test": c.test_ids}}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    for g in c.graphs:
        rec = graph_to_record(g, c.label_vocab or None)
        (path / "graphs" / f"{g.graph_id}.json").write_text(json.dumps(rec))
    if c.label_cache:
        save_label_cache(c.label_cache, path / "labels.txt")


def _read_json(p: Path):
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{p}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def load_corpus(path: str | Path) -> Corpus:
    path = Path(path)
    gdir = path / "graphs"
    files = sorted(gdir.glob("*.json")) if gdir.is_dir() else []
    if not files:
        raise CorpusError(f"{path}: no graphs found")
    mpath = path / "manifest.json"
    manifest = _read_json(mpath) if mpath.exists() else {}
    vocab = list(manifest.get("label_vocab") or [])
    graphs = []
    for f in files:
        try:
            graphs.append(graph_from_record(_read_json(f), vocab or None, source=str(f)))
        except GraphValidationError as exc:
            raise CorpusError(str(exc)) from None
    split = manifest.get("split") or {}
    corpus = Corpus(graphs, vocab, list(split.get("train", [])), list(split.get("test", [])), manifest.get("name", path.name))
    lpath = path / "labels.txt"
    if lpath.exists():
        corpus.label_cache = load_label_cache(lpath)
    return corpus


def save_label_cache(cache: dict[tuple[str, str], float], path: str | Path) -> None:
    with open(path, "w") as fh:
        for (a, b), v in sorted(cache.items()):
            fh.write(f"{a} {b} {v:g}\n")


def load_label_cache(path: str | Path) -> dict[tuple[str, str], float]:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise CorpusError(f"{path}:{lineno}: expected 'id_i id_j ged'")
            try:
                out[_key(parts[0], parts[1])] = float(parts[2])
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: bad GED value {parts[2]!r}") from None
    return out


# --------------------------------------------------------------------------
# synthetic data


def random_connected_graph(rng: np.random.Generator, n: int, edge_prob: float, label_count: int, graph_id: str, max_tries: int = 1000) -> NodeGraph:
    for _ in range(max_tries):
        iu = np.triu_indices(n, 1)
        keep = rng.random(len(iu[0])) < edge_prob
        edges = tuple(zip(iu[0][keep].tolist(), iu[1][keep].tolist()))
        if _connected(n, edges):
            labels = tuple(rng.integers(0, label_count, size=n).tolist()) if label_count > 0 else None
            return NodeGraph(n, edges, labels, graph_id=graph_id)
    raise CorpusError(f"could not sample a connected {n}-node graph with edge_prob={edge_prob} in {max_tries} tries")


def _connected(n: int, edges) -> bool:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in edges:
        parent[find(i)] = find(j)
    return len({find(v) for v in range(n)}) == 1


def generate_synthetic(
    n_graphs: int,
    n_range: tuple[int, int] = (4, 8),
    edge_prob: float = 0.35,
    label_count: int = 0,
    seed: int = 0,
    test_fraction: float = 0.2,
    name: str = "synthetic",
) -> Corpus:
    lo, hi = n_range
    if not 2 <= lo <= hi <= 10:
        raise ValueError(f"n_range must satisfy 2 <= lo <= hi <= 10, got {n_range}")
    rng = np.random.default_rng(seed)
    width = len(str(n_graphs - 1))
    graphs = [random_connected_graph(rng, int(rng.integers(lo, hi + 1)), edge_prob, label_count, f"g{k:0{width}d}") for k in range(n_graphs)]
    train_ids, test_ids = split_ids([g.graph_id for g in graphs], test_fraction, seed)
    vocab = [f"L{k}" for k in range(label_count)]
    return Corpus(graphs, vocab, train_ids, test_ids, name)


def split_ids(ids: Sequence[str], test_fraction: float, seed: int) -> tuple[list[str], list[str]]:
    rng = np.random.default_rng(seed + 7919)
    perm = rng.permutation(len(ids))
    n_test = int(round(test_fraction * len(ids)))
    test = sorted(ids[k] for k in perm[:n_test])
    train = sorted(ids[k] for k in perm[n_test:])
    return train, test


# --------------------------------------------------------------------------
# labels


def _ged_job(args):
    g1, g2, budget = args
    return exact_ged_astar(g1, g2, UNIT_COSTS, budget)


def required_pairs(c: Corpus) -> list[tuple[str, str]]:
    """Unordered train x train pairs and test x train pairs."""
    train = c.train_ids
    pairs = {_key(a, b) for i, a in enumerate(train) for b in train[i + 1:]}
    pairs |= {_key(q, t) for q in c.test_ids for t in train}
    return sorted(pairs)


def label_corpus(c: Corpus, node_budget: int = 10, workers: int | None = None, pairs: Sequence[tuple[str, str]] | None = None) -> dict:
    """Fill ``c.label_cache`` with exact GED for every required pair not yet cached."""
    todo = [p for p in (required_pairs(c) if pairs is None else pairs) if _key(*p) not in c.label_cache and p[0] != p[1]]
    jobs = [(c.by_id[a], c.by_id[b], node_budget) for a, b in todo]
    workers = workers if workers is not None else (os.cpu_count() or 1)
    if workers > 1 and len(jobs) > 200:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_ged_job, jobs, chunksize=64))
    else:
        results = [_ged_job(j) for j in jobs]
    for (a, b), v in zip(todo, results):
        c.label_cache[_key(a, b)] = v
    log.info("labeled %d pairs", len(todo))
    return c.label_cache


# --------------------------------------------------------------------------
# pair streams


@dataclass(frozen=True)
class Pair:
    g1: NodeGraph
    g2: NodeGraph
    ged: float
    target: float


def enumerate_pairs(c: Corpus, mode: str = "train", seed: int = 0, include_self: bool = False, shuffle: bool = True) -> Iterator[Pair]:
    """Train: unordered train x train pairs (self pairs only if asked), shuffled
    by seed. Eval: every test graph against every train graph, grouped by
    query in a fixed order.
    """
    if mode == "train":
        ids = c.train_ids
        keys = [(a, b) for i, a in enumerate(ids) for b in ids[i + (0 if include_self else 1):]]
        if shuffle:
            order = np.random.default_rng(seed).permutation(len(keys))
            keys = [keys[k] for k in order]
    elif mode == "eval":
        keys = [(q, t) for q in c.test_ids for t in c.train_ids]
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    for a, b in keys:
        ged = c.ged(a, b)
        ga, gb = c.by_id[a], c.by_id[b]
        yield Pair(ga, gb, ged, normalized_target(ged, ga.num_nodes, gb.num_nodes))


def bundled_corpus_path() -> Path:
    """The labeled 100-graph synthetic corpus shipped with the package."""
    return Path(__file__).parent / "data" / "synthetic100"
