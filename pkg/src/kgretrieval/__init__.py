"""Text-image retrieval with knowledge-graph caption expansion."""

__version__ = "0.1.0"
