"""Graph similarity learning: dual node/edge embeddings, cross-graph
attention, structure perception matching and an exact GED oracle."""

__version__ = "0.1.0"

from .datasets import Corpus, enumerate_pairs, generate_synthetic, label_corpus, load_corpus, save_corpus
from .ged import exact_ged_astar, normalized_target
from .graphs import NodeGraph, build_assignment_graph, build_line_graph, modified_incidence
from .model import SEGMN, GraphSimStub, ModelConfig
from .training import ExperimentConfig, evaluate, train

__all__ = [
    "Corpus",
    "ExperimentConfig",
    "GraphSimStub",
    "ModelConfig",
    "NodeGraph",
    "SEGMN",
    "build_assignment_graph",
    "build_line_graph",
    "enumerate_pairs",
    "evaluate",
    "exact_ged_astar",
    "generate_synthetic",
    "label_corpus",
    "load_corpus",
    "modified_incidence",
    "normalized_target",
    "save_corpus",
    "train",
]
