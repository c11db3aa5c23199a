"""Unsupervised side-channel key recovery against a simulated Ascon Initialization round."""

__version__ = "0.1.0"
