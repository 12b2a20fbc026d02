"""Synthetic benchmark, training loop, metrics and experiment drivers."""
