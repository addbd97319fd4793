"""Context-aware refinement of target and aspect embeddings for targeted aspect-based sentiment analysis."""
__version__ = "0.1.0"
