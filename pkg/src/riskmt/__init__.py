"""Sequence-level risk training (MLE, MRT, doc-MRT) for a small NMT model."""

__version__ = "0.1.0"
