"""Learned sparse retrieval with trainable hybrid hard/soft thresholds."""

from .index import InvertedIndex, SparsifyMode, build
from .search import exhaustive_topk, maxscore_topk, prepare_query
from .thresholds import ThresholdConfig, Thresholding
from .vectors import Collection, SparseVector

__version__ = "0.1.0"

__all__ = [
    "Collection",
    "InvertedIndex",
    "SparseVector",
    "SparsifyMode",
    "ThresholdConfig",
    "Thresholding",
    "build",
    "exhaustive_topk",
    "maxscore_topk",
    "prepare_query",
]
