"""Binary detection metrics for the eating (positive) class."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pals.errors import UsageError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise UsageError("confusion counts must be non-negative")

    @classmethod
    def from_labels(cls, y_true, y_pred, positive=1):
        y_true = np.asarray(y_true)
        y_pred = np.asarray(y_pred)
        if y_true.shape != y_pred.shape:
            raise UsageError("y_true and y_pred differ in shape")
        t = y_true == positive
        p = y_pred == positive
        return cls(int(np.sum(t & p)), int(np.sum(~t & p)),
                   int(np.sum(~t & ~p)), int(np.sum(t & ~p)))

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def recall_defined(self):
        """False when there are no positives (recall reported as 0)."""
        return self.tp + self.fn > 0

    @property
    def precision_defined(self):
        """False when nothing was predicted positive (precision reported as 0)."""
        return self.tp + self.fp > 0


def recall(c):
    return c.tp / (c.tp + c.fn) if c.recall_defined else 0.0


def precision(c):
    return c.tp / (c.tp + c.fp) if c.precision_defined else 0.0


def f_score(p, r):
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


def scores(y_true, y_pred):
    """(precision, recall, f-score) of the positive class."""
    c = ConfusionCounts.from_labels(y_true, y_pred)
    p, r = precision(c), recall(c)
    return p, r, f_score(p, r)
