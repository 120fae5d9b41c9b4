"""Datasets, synthetic streams, metrics and experiment recipes."""
