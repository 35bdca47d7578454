"""Text-to-entity mapping over knowledge-graph embeddings enriched with textual features."""

from kbmap.graph import KbGraph, NodeKind, load_edge_list, read_graph
from kbmap.tfidf import TfIdfTable, compute_tfidf, extend_graph, tokenize
from kbmap.walks import WalkConfig, generate_corpus, sample_walk, step_distribution
from kbmap.skipgram import EmbeddingTable, SkipgramConfig, train_skipgram
from kbmap.mslstm import MsLstmConfig, MsLstmModel, TrainConfig, TrainingPair, train
from kbmap.evaluation import MetricsReport, classify_nodes, evaluate_retrieval

__all__ = [
    "KbGraph",
    "NodeKind",
    "load_edge_list",
    "read_graph",
    "TfIdfTable",
    "compute_tfidf",
    "extend_graph",
    "tokenize",
    "WalkConfig",
    "generate_corpus",
    "sample_walk",
    "step_distribution",
    "EmbeddingTable",
    "SkipgramConfig",
    "train_skipgram",
    "MsLstmConfig",
    "MsLstmModel",
    "TrainConfig",
    "TrainingPair",
    "train",
    "MetricsReport",
    "classify_nodes",
    "evaluate_retrieval",
]

__version__ = "0.1.0"
