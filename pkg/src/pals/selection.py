"""Informativeness scoring, query selection and minority oversampling."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from pals.errors import UsageError


@dataclass(frozen=True)
class InformativenessScore:
    instance_id: object
    score: float


@dataclass
class QueryBudget:
    """Remaining query allowance; ``spent`` only moves down through ``refund``."""

    total: int
    spent: int = 0

    def __post_init__(self):
        if self.total < 0 or not 0 <= self.spent <= self.total:
            raise UsageError(f"invalid budget state {self.spent}/{self.total}")

    @property
    def remaining(self):
        return self.total - self.spent

    def spend(self):
        if self.spent >= self.total:
            raise UsageError("query budget exhausted")
        self.spent += 1

    def refund(self):
        if self.spent == 0:
            raise UsageError("nothing to refund")
        self.spent -= 1


def _validate(p, atol=1e-9):
    p = np.asarray(p, dtype=float)
    if p.size < 2 or np.any(~np.isfinite(p)) or np.any(p < -atol) or np.any(p > 1 + atol):
        raise UsageError(f"invalid label distribution {p!r}")
    if abs(float(p.sum()) - 1.0) > atol:
        raise UsageError(f"label distribution sums to {float(p.sum())!r}")
    return p


def entropy(p):
    """Shannon entropy of a label distribution, in bits."""
    p = _validate(p)
    return float(sum(-q * math.log2(q) for q in p.tolist() if q > 0))


def entropies(P):
    """Row-wise entropy (bits) of an (n, n_classes) array of distributions."""
    P = np.asarray(P, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, -P * np.log2(np.where(P > 0, P, 1.0)), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0)


def select_top(scores, delta):
    """Ids of the ``delta`` highest scores; equal scores favour the lower id."""
    if delta < 0:
        raise UsageError("delta must be >= 0")
    ranked = sorted(scores, key=lambda s: (-s.score, s.instance_id))
    return [s.instance_id for s in ranked[:delta]]


def uniform_select(ids, delta, seed):
    """``delta`` ids drawn uniformly without replacement."""
    ids = list(ids)
    if not 0 <= delta <= len(ids):
        raise UsageError(f"cannot draw {delta} of {len(ids)} ids")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    picks = rng.choice(len(ids), size=delta, replace=False)
    return [ids[i] for i in picks]


def farthest_point_select(X, delta, anchors=None):
    """Greedy max-min selection of ``delta`` row indices of ``X``.

    Distances are measured to ``anchors`` (already-labeled points) plus the
    picks so far; with no anchors the first pick is the row farthest from
    the centroid. Ties go to the lower row index.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    delta = min(delta, n)
    if delta <= 0:
        return []
    if anchors is not None and len(anchors):
        mind = cdist(X, np.asarray(anchors, dtype=float)).min(axis=1)
    else:
        mind = None
    picks = []
    for _ in range(delta):
        if mind is None:
            d0 = np.linalg.norm(X - X.mean(axis=0), axis=1)
            i = int(np.argmax(d0))
            mind = np.full(n, np.inf)
        else:
            cand = mind.copy()
            cand[picks] = -np.inf
            i = int(np.argmax(cand))
        picks.append(i)
        mind = np.minimum(mind, np.linalg.norm(X - X[i], axis=1))
    return picks


@dataclass
class SmoteResult:
    """Balanced set: the inputs first, then the synthetic minority rows.

    ``parents[j] = (base, neighbour, gap)`` for synthetic row ``j`` (indices
    into the input), so ``X[n + j] = X[base] + gap * (X[neighbour] - X[base])``.
    """

    features: np.ndarray
    labels: np.ndarray
    n_original: int
    parents: list
    warning: str | None = None

    @property
    def synthetic_mask(self):
        mask = np.zeros(len(self.labels), dtype=bool)
        mask[self.n_original:] = True
        return mask


def minority_neighbors(Xm, k):
    """Each minority row's ``k`` nearest minority rows (ties: lower index)."""
    d = cdist(Xm, Xm)
    np.fill_diagonal(d, np.inf)
    idx = np.arange(len(Xm))
    return np.array([np.lexsort((idx, row))[:k] for row in d], dtype=int)


def smote_balance(X, y, k_neighbors=5, seed=None):
    """Oversample the minority class until both classes have equal counts.

    Each synthetic point lies on the segment between a random minority point
    and one of its ``k_neighbors`` nearest minority neighbours (fewer when the
    minority has at most ``k_neighbors`` members). With fewer than two
    minority points nothing is generated and ``warning`` is set.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if k_neighbors < 1:
        raise UsageError("k_neighbors must be >= 1")
    n = len(y)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2 or counts[0] == counts[1]:
        msg = None if len(classes) == 2 else "only one class present"
        return SmoteResult(X.copy(), y.copy(), n, [], msg)
    minority = int(classes[np.argmin(counts)])
    need = int(counts.max() - counts.min())
    members = np.flatnonzero(y == minority)
    if len(members) < 2:
        msg = f"cannot interpolate with {len(members)} minority instance(s)"
        warnings.warn(f"smote_balance: {msg}", RuntimeWarning, stacklevel=2)
        return SmoteResult(X.copy(), y.copy(), n, [], msg)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = min(k_neighbors, len(members) - 1)
    nn = minority_neighbors(X[members], k)
    base = rng.integers(0, len(members), size=need)
    pick = rng.integers(0, k, size=need)
    gap = rng.random(need)
    src = members[base]
    dst = members[nn[base, pick]]
    synth = X[src] + gap[:, None] * (X[dst] - X[src])
    parents = list(zip(src.tolist(), dst.tolist(), gap.tolist()))
    return SmoteResult(np.vstack([X, synth]),
                       np.concatenate([y, np.full(need, minority)]), n, parents)
