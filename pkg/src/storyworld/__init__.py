"""Story-to-tile-world generation with LLM extraction, grid repair and evaluation."""

__version__ = "0.1.0"
