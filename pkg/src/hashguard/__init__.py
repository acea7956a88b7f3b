"""Hamming-space retrieval with adversarial attacks and unsupervised detection."""

__version__ = "0.1.0"
