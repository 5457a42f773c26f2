"""Attention NMT with Relation Network Layers, built on a small numpy autodiff core."""

__version__ = "0.1.0"
