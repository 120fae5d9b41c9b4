"""Proximity-based active learning for wearable eating-moment detection."""

__version__ = "0.1.0"

EATING = 1
NON_EATING = 0
UNLABELED = -1
N_CLASSES = 2
