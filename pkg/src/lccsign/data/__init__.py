"""Keypoint datasets, skeleton graphs, word vectors and synthetic data."""

from .samples import (
    AugmentParams,
    KeypointSample,
    Manifest,
    StreamKind,
    augment,
    center_on_root,
    derive_stream,
    load_dataset,
    load_manifest,
    load_split,
    resample_length,
    save_dataset,
)
from .skeleton import CHANNELS, NODE_COUNTS, SkeletonGraph, build_graph, default_graphs, load_graph_config
from .synthetic import SyntheticDataset, SyntheticSpec, even_groups, generate_synthetic
from .wordvec import WordEmbeddingTable, load_word_embeddings, save_word_vectors

__all__ = [
    "AugmentParams",
    "CHANNELS",
    "KeypointSample",
    "Manifest",
    "NODE_COUNTS",
    "SkeletonGraph",
    "StreamKind",
    "SyntheticDataset",
    "SyntheticSpec",
    "WordEmbeddingTable",
    "augment",
    "build_graph",
    "center_on_root",
    "default_graphs",
    "derive_stream",
    "even_groups",
    "generate_synthetic",
    "load_dataset",
    "load_graph_config",
    "load_manifest",
    "load_split",
    "load_word_embeddings",
    "resample_length",
    "save_dataset",
    "save_word_vectors",
]
