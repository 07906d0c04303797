"""Analytics toolkit for transfer-learning performance tables.

The package turns per-model source-to-target transfer scores into
normalized matrices, low-rank task embeddings, hierarchical clusterings,
factor models, and summary reports, with a deterministic command line in
front of it all.
"""

__version__ = "0.1.0"
