"""vitshard: export ViT patch embeddings into the patchlens shard format."""

__version__ = "0.1.0"
