"""Inference attacks (property, subgraph, reconstruction) against graph embeddings
produced by GNN graph classifiers, plus a Laplace-noise defense and an experiment harness."""

from .graphs import Graph, GraphDataset, load_tudataset, split_dataset
from .models import EncoderConfig, GraphEncoder, TrainedEncoder, train_target

__version__ = "0.1.0"

__all__ = ["EncoderConfig", "Graph", "GraphDataset", "GraphEncoder", "TrainedEncoder", "load_tudataset",
           "split_dataset", "train_target"]
