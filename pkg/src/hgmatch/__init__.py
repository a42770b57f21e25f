"""Two-tower heterogeneous-graph embedding retrieval for keyword matching."""

__version__ = "0.1.0"
