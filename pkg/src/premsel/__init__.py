"""Premise selection over dependently typed proof corpora.

The pipeline reads exported scope files, turns type signatures into binary
token trees, encodes them with a tree-structured linear Transformer and ranks
lemmas for each hole.
"""

from .config import ModelConfig, RunConfig, TrainConfig, load_config
from .ingest import load_file, parse_file
from .metrics import RankingReport, average_precision, r_precision
from .model import PremiseModel
from .tokenizer import FileGraph, build_file_graph, tokenize_file
from .training import evaluate, info_nce_loss, split_corpus, train

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "RunConfig", "TrainConfig", "load_config",
    "load_file", "parse_file",
    "RankingReport", "average_precision", "r_precision",
    "PremiseModel",
    "FileGraph", "build_file_graph", "tokenize_file",
    "evaluate", "info_nce_loss", "split_corpus", "train",
]
