"""Multiscale DeepONet workbench for high-frequency operators."""

__version__ = "0.1.0"
