"""Learnt contrastive concept embeddings for keypoint-based sign recognition."""

__version__ = "0.1.0"
