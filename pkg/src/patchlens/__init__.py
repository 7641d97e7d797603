"""patchlens: evaluation engine for patch-level vision-transformer embeddings."""

__version__ = "0.1.0"
