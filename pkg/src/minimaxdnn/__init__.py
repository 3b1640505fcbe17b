"""Minimax-rate laboratory for sparse deep ReLU network classifiers."""

__version__ = "0.1.0"
