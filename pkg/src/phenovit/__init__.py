"""Spatio-temporal vegetation pixel classification with a compact ViT."""

__version__ = "0.1.0"
