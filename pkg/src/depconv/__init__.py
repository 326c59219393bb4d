"""Dependency-tree convolutional sentence classification."""

__version__ = "0.1.0"
