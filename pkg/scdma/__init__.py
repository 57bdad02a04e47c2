"""Sparse-spread CDMA signature design and evaluation toolkit"""

__version__ = "1.0.0"
