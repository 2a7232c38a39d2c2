"""
Sparse and dense collaborative filtering with cross-view alignment.

An item-item elastic-net model and a degree-weighted embedding model each
feed pseudo-positives to the other, and their scores are blended with a
tuned weight.
"""

__version__ = "1.0.0"
