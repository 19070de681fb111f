"""Absolute pose regression with dual-branch transformers."""
__version__ = "0.1.0"
