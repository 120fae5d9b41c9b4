"""Synthetic in-lab pools and free-living streams.

Each class is a uniform hypercube (half-width 1) in ``n_features``
dimensions. In the lab, non-eating sits at the origin and eating at
``separation * e0``; ``separation = (1 - overlap) * (2 + 2 sqrt(D))``, so
``overlap=0`` leaves a gap wider than a class diameter and ``overlap=1``
stacks the classes.

In the wild both classes move: eating rotates by ``shift_angle`` degrees
toward ``e1`` (a personal eating style the lab model has not seen) and the
non-eating cube gains ``wild_spread`` extra half-width. Eating windows come
in contiguous episodes ("meals") so that positives cluster in time, and the
positive count is exact: ``round(rate * n)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from pals.errors import ConfigurationError


@dataclass
class SyntheticStreamSpec:
    positive_rate: float = 0.067
    overlap: float = 0.8
    duration_s: float = 4 * 3600.0
    seed: int = 0
    n_features: int = 6
    stride_s: float = 3.0
    episode_s: float = 300.0
    drift_at_s: float | None = None
    drift_positive_rate: float | None = None
    lab_size: int = 400
    lab_positive_rate: float = 0.32
    shift_angle: float = 70.0
    wild_spread: float = 0.5
    test_size: int = 2000

    def __post_init__(self):
        problems = []
        if not 0 < self.positive_rate < 1:
            problems.append("positive_rate must be in (0, 1)")
        if self.duration_s <= 0:
            problems.append("duration_s must be > 0")
        if not 0 <= self.overlap <= 1:
            problems.append("overlap must be in [0, 1]")
        if self.n_features < 2:
            problems.append("n_features must be >= 2")
        if self.stride_s <= 0 or self.episode_s <= 0:
            problems.append("stride_s and episode_s must be > 0")
        if self.drift_positive_rate is not None and not 0 < self.drift_positive_rate < 1:
            problems.append("drift_positive_rate must be in (0, 1)")
        if self.drift_at_s is not None and not 0 < self.drift_at_s < self.duration_s:
            problems.append("drift_at_s must fall inside the stream")
        if problems:
            raise ConfigurationError("; ".join(problems), problems)

    def to_dict(self):
        return asdict(self)

    @property
    def separation(self):
        return (1.0 - self.overlap) * (2.0 + 2.0 * math.sqrt(self.n_features))


@dataclass
class SyntheticData:
    lab_X: np.ndarray
    lab_y: np.ndarray
    stream_t_ms: np.ndarray
    stream_X: np.ndarray
    stream_y: np.ndarray
    test_X: np.ndarray
    test_y: np.ndarray
    spec: SyntheticStreamSpec


def _centers(spec):
    d = spec.n_features
    sep = spec.separation
    lab_pos = np.zeros(d)
    lab_pos[0] = sep
    theta = math.radians(spec.shift_angle)
    wild_pos = np.zeros(d)
    wild_pos[0] = sep * math.cos(theta)
    wild_pos[1] = sep * math.sin(theta)
    return np.zeros(d), lab_pos, wild_pos


def _cube(rng, center, n, half_width=1.0):
    return center + rng.uniform(-half_width, half_width, size=(n, len(center)))


def _episode_labels(rng, n, n_pos, episode_len):
    """Binary vector with ``n_pos`` ones grouped into runs of ~``episode_len``."""
    y = np.zeros(n, dtype=int)
    if n_pos <= 0:
        return y
    n_ep = max(1, int(round(n_pos / episode_len)))
    lengths = np.full(n_ep, n_pos // n_ep)
    lengths[: n_pos % n_ep] += 1
    gaps_total = n - n_pos
    # random gap sizes between episodes (stars and bars)
    cuts = np.sort(rng.integers(0, gaps_total + 1, size=n_ep))
    gaps = np.diff(np.concatenate([[0], cuts]))
    pos = 0
    for gap, length in zip(gaps, lengths):
        pos += int(gap)
        y[pos:pos + int(length)] = 1
        pos += int(length)
    return y


def _wild_features(rng, spec, y):
    neg, _, wild_pos = _centers(spec)
    X = np.empty((len(y), spec.n_features))
    n_pos = int(y.sum())
    X[y == 1] = _cube(rng, wild_pos, n_pos)
    X[y == 0] = _cube(rng, neg, len(y) - n_pos, 1.0 + spec.wild_spread)
    return X


def generate_synthetic(spec):
    """Lab pool, time-ordered wild stream and an i.i.d. wild test set.

    Reproducible per ``spec.seed``.
    """
    seq = np.random.SeedSequence(spec.seed)
    rng_lab, rng_times, rng_stream, rng_test = (np.random.default_rng(s) for s in seq.spawn(4))

    neg, lab_pos, _ = _centers(spec)
    n_lab_pos = int(round(spec.lab_size * spec.lab_positive_rate))
    lab_y = np.zeros(spec.lab_size, dtype=int)
    lab_y[:n_lab_pos] = 1
    lab_y = rng_lab.permutation(lab_y)
    lab_X = np.empty((spec.lab_size, spec.n_features))
    lab_X[lab_y == 1] = _cube(rng_lab, lab_pos, n_lab_pos)
    lab_X[lab_y == 0] = _cube(rng_lab, neg, spec.lab_size - n_lab_pos)

    n = int(spec.duration_s // spec.stride_s)
    t_ms = np.arange(n) * spec.stride_s * 1000.0
    episode_len = max(1, int(round(spec.episode_s / spec.stride_s)))
    if spec.drift_at_s is not None and spec.drift_positive_rate is not None:
        cut = int(spec.drift_at_s // spec.stride_s)
        y = np.concatenate([
            _episode_labels(rng_times, cut, int(round(spec.positive_rate * cut)), episode_len),
            _episode_labels(rng_times, n - cut,
                            int(round(spec.drift_positive_rate * (n - cut))), episode_len),
        ])
    else:
        y = _episode_labels(rng_times, n, int(round(spec.positive_rate * n)), episode_len)
    X = _wild_features(rng_stream, spec, y)

    test_rate = float(y.mean()) if y.any() else spec.positive_rate
    test_y = np.zeros(spec.test_size, dtype=int)
    test_y[: int(round(test_rate * spec.test_size))] = 1
    test_y = rng_test.permutation(test_y)
    test_X = _wild_features(rng_test, spec, test_y)
    return SyntheticData(lab_X, lab_y, t_ms, X, y, test_X, test_y, spec)
