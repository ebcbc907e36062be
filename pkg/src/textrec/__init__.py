"""Text-profile embeddings for zero-shot recommendation and text-enhanced CF."""

__version__ = "0.1.0"
