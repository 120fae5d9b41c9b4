"""Signal-to-feature pipeline: filter, segment, extract, select.

Streams are held as column arrays (``SensorStream``) rather than lists of
record objects; a session of several hours at 50 Hz is ~10^6 samples.
``SensorStream`` still behaves as a sequence of ``SensorRecord``.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import signal, stats

from pals import EATING, NON_EATING, UNLABELED
from pals.errors import ConfigurationError, DataError, UsageError

FEATURES = (
    "median",
    "mean",
    "max",
    "min",
    "p2p",
    "skew",
    "kurtosis",
    "variance",
    "peaks_count",
    "mean_peaks_amplitude",
    "max_peaks_amplitude",
    "mean_peaks_distance",
    "min_peaks_distance",
    "std_peaks_distance",
    "zero_crossings",
)


@dataclass(frozen=True)
class SensorRecord:
    timestamp: float
    channels: tuple[float, ...]
    label: str | None = None


class SensorStream(Sequence):
    """Timestamped multichannel samples from one session.

    Parameters
    ----------
    t_ms : array-like of shape (n,)
        Milliseconds since stream start, strictly increasing.
    values : array-like of shape (n, c)
    sampling_rate : float
        Declared rate in Hz; window lengths derive from it.
    labels : sequence of str or None, optional
        Raw activity label per sample.
    eating : array-like of shape (n,), optional
        Binary label per sample (1 eating, 0 not, -1 unknown).
    """

    def __init__(self, t_ms, values, sampling_rate, labels=None, eating=None,
                 channel_names=None):
        self.t_ms = np.asarray(t_ms, dtype=float).reshape(-1)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        self.values = values
        self.sampling_rate = float(sampling_rate)
        n = len(self.t_ms)
        if self.values.shape[0] != n:
            raise UsageError(
                f"{n} timestamps but {self.values.shape[0]} sample rows")
        if n > 1 and np.any(np.diff(self.t_ms) <= 0):
            bad = int(np.argmax(np.diff(self.t_ms) <= 0)) + 1
            raise DataError(f"timestamps not strictly increasing at sample {bad}")
        self.labels = list(labels) if labels is not None else [None] * n
        if eating is None:
            eating = np.full(n, UNLABELED, dtype=int)
        self.eating = np.asarray(eating, dtype=int).reshape(-1)
        if channel_names is None:
            channel_names = [f"ch{i}" for i in range(self.n_channels)]
        self.channel_names = list(channel_names)

    @property
    def n_channels(self):
        return self.values.shape[1]

    def __len__(self):
        return len(self.t_ms)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return SensorStream(self.t_ms[i], self.values[i], self.sampling_rate,
                                self.labels[i], self.eating[i], self.channel_names)
        return SensorRecord(float(self.t_ms[i]), tuple(self.values[i].tolist()),
                            self.labels[i])

    def with_values(self, values):
        return SensorStream(self.t_ms, values, self.sampling_rate, self.labels,
                            self.eating, self.channel_names)

    @classmethod
    def from_records(cls, records, sampling_rate, eating_labels=()):
        records = list(records)
        if not records:
            return cls(np.empty(0), np.empty((0, 1)), sampling_rate)
        widths = {len(r.channels) for r in records}
        if len(widths) != 1:
            raise DataError(f"records disagree on channel count: {sorted(widths)}")
        eating_labels = set(eating_labels)
        eating = [UNLABELED if r.label is None
                  else (EATING if r.label in eating_labels else NON_EATING)
                  for r in records]
        return cls([r.timestamp for r in records], [r.channels for r in records],
                   sampling_rate, [r.label for r in records], eating)


@dataclass
class SignalSegment:
    """W consecutive samples cut from a stream."""

    values: np.ndarray
    start_ms: float
    window_label: int | None = None
    channel_names: list[str] = field(default_factory=list)

    @property
    def n_samples(self):
        return self.values.shape[0]


@dataclass
class FeatureVector:
    values: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.feature_names) != len(self.values):
            raise UsageError("feature_names and values differ in length")

    def __len__(self):
        return len(self.values)


@dataclass
class FeatureSelectionMask:
    kept_indices: tuple[int, ...]
    scores: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        idx = list(self.kept_indices)
        if not idx:
            raise UsageError("mask keeps no features")
        if idx != sorted(set(idx)):
            raise UsageError("kept_indices must be sorted and unique")
        if idx[0] < 0 or idx[-1] >= len(self.scores):
            raise UsageError("kept_indices out of bounds")
        self.kept_indices = tuple(int(i) for i in idx)


def feature_names(channel_names):
    return tuple(f"{feat}_{ch}" for ch in channel_names for feat in FEATURES)


def _single_pole_coefficients(cutoff_hz, sampling_rate):
    rc = 1.0 / (2.0 * math.pi * cutoff_hz)
    dt = 1.0 / sampling_rate
    alpha = dt / (rc + dt)
    return np.array([alpha]), np.array([1.0, alpha - 1.0])


def low_pass_filter(stream, cutoff_hz=5.0):
    """First-order single-pole low-pass applied to every channel.

    The filter state starts at the first sample, so constant signals pass
    through unchanged and the output is linear in the input.
    """
    fs = stream.sampling_rate
    if not (0 < cutoff_hz < fs / 2):
        raise ConfigurationError(
            f"cutoff_hz must lie in (0, {fs / 2}) for {fs} Hz sampling, got {cutoff_hz}")
    if len(stream) == 0:
        raise UsageError("cannot filter an empty stream")
    b, a = _single_pole_coefficients(cutoff_hz, fs)
    zi = signal.lfilter_zi(b, a)
    out = np.empty_like(stream.values)
    for c in range(stream.n_channels):
        x = stream.values[:, c]
        out[:, c], _ = signal.lfilter(b, a, x, zi=zi * x[0])
    return stream.with_values(out)


def window_length(window_seconds, sampling_rate):
    return int(round(window_seconds * sampling_rate))


def segment(stream, window_seconds=6.0, overlap_fraction=0.5, sampling_rate=None):
    """Cut a stream into half-overlapping windows of exactly W samples.

    A window is labeled eating iff more than half of its samples are; ties go
    to non-eating. Windows with any unknown sample label get ``None``. The
    trailing partial window is dropped.
    """
    if overlap_fraction != 0.5:
        raise ConfigurationError("only overlap_fraction=0.5 is supported")
    if window_seconds <= 0:
        raise ConfigurationError("window_seconds must be positive")
    fs = stream.sampling_rate if sampling_rate is None else float(sampling_rate)
    w = window_length(window_seconds, fs)
    if w < 2:
        raise ConfigurationError(f"window of {w} samples is too short")
    stride = w // 2
    n = len(stream)
    segments = []
    if n < w:
        return segments
    for start in range(0, n - w + 1, stride):
        stop = start + w
        lab = stream.eating[start:stop]
        if np.any(lab == UNLABELED):
            window_label = None
        else:
            window_label = EATING if np.sum(lab == EATING) * 2 > w else NON_EATING
        segments.append(SignalSegment(stream.values[start:stop].copy(),
                                      float(stream.t_ms[start]), window_label,
                                      list(stream.channel_names)))
    return segments


def _peaks(x):
    inner = x[1:-1]
    return np.flatnonzero((inner > x[:-2]) & (inner > x[2:])) + 1


def _zero_crossings(x):
    centered = x - x.mean()
    signs = np.sign(centered)
    nonzero = signs[signs != 0]
    if nonzero.size == 0:
        return 0
    # exact zeros inherit the preceding sign; leading zeros the first nonzero one
    filled = signs.copy()
    prev = nonzero[0]
    for i, s in enumerate(filled):
        if s == 0:
            filled[i] = prev
        else:
            prev = s
    return int(np.count_nonzero(filled[1:] != filled[:-1]))


def channel_features(x):
    """The 15 per-channel features, in ``FEATURES`` order.

    Skew and kurtosis (excess, normal -> 0) are 0 for constant input. Peaks
    are strict interior local maxima; distances are in samples and are 0
    when fewer than two peaks exist.
    """
    x = np.asarray(x, dtype=float)
    var = float(np.var(x))
    if var > 0 and np.ptp(x) > 1e-12 * max(1.0, float(np.max(np.abs(x)))):
        skew = float(stats.skew(x))
        kurt = float(stats.kurtosis(x, fisher=True))
    else:
        skew = kurt = 0.0
    peaks = _peaks(x)
    if peaks.size:
        amps = x[peaks]
        mean_amp, max_amp = float(amps.mean()), float(amps.max())
    else:
        mean_amp = max_amp = 0.0
    if peaks.size >= 2:
        gaps = np.diff(peaks).astype(float)
        mean_gap, min_gap, std_gap = float(gaps.mean()), float(gaps.min()), float(gaps.std())
    else:
        mean_gap = min_gap = std_gap = 0.0
    return np.array([
        float(np.median(x)), float(np.mean(x)), float(np.max(x)), float(np.min(x)),
        float(np.ptp(x)), skew, kurt, var, float(peaks.size), mean_amp, max_amp,
        mean_gap, min_gap, std_gap, float(_zero_crossings(x)),
    ])


def extract_features(seg):
    values = np.asarray(seg.values, dtype=float)
    if values.ndim != 2 or values.shape[0] < 3:
        raise UsageError("segment needs a (W>=3, channels) sample array")
    names = seg.channel_names or [f"ch{i}" for i in range(values.shape[1])]
    feats = np.concatenate([channel_features(values[:, c]) for c in range(values.shape[1])])
    return FeatureVector(feats, feature_names(names))


def chi2_scores(X, y):
    """Chi-squared statistic of each (min-max scaled) feature against the class.

    Observed counts are per-class feature sums; expected counts are the
    feature total split by class frequency.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    scaled = (X - lo) / span
    classes = np.unique(y)
    onehot = (y[:, None] == classes[None, :]).astype(float)
    observed = onehot.T @ scaled
    expected = np.outer(onehot.mean(axis=0), scaled.sum(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (observed - expected) ** 2 / expected, 0.0)
    return terms.sum(axis=0)


def chi2_select(features, labels, keep=None):
    """Keep the ``keep`` features most dependent on the label.

    ``features`` is a list of ``FeatureVector`` or a 2-D array. Ties rank the
    lower index first. When every label is the same the scores are all zero,
    the first ``keep`` indices are returned and ``degenerate`` is set.
    """
    X = np.asarray([f.values if isinstance(f, FeatureVector) else f for f in features],
                   dtype=float)
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] == 0:
        raise UsageError("need a non-empty feature matrix")
    if len(y) != X.shape[0]:
        raise UsageError(f"{X.shape[0]} feature rows but {len(y)} labels")
    d = X.shape[1]
    if keep is None:
        keep = math.ceil(d / 2)
    if not 1 <= keep <= d:
        raise ConfigurationError(f"keep must be in [1, {d}], got {keep}")
    if len(np.unique(y)) < 2:
        warnings.warn("chi2_select: all labels identical, selection is arbitrary",
                      RuntimeWarning, stacklevel=2)
        return FeatureSelectionMask(tuple(range(keep)), np.zeros(d), degenerate=True)
    scores = chi2_scores(X, y)
    order = np.lexsort((np.arange(d), -scores))
    return FeatureSelectionMask(tuple(sorted(order[:keep].tolist())), scores)


def apply_mask(fv, mask):
    if mask.kept_indices[-1] >= len(fv.values) or len(mask.scores) != len(fv.values):
        raise UsageError(
            f"mask built for {len(mask.scores)} features, vector has {len(fv.values)}")
    idx = list(mask.kept_indices)
    return FeatureVector(fv.values[idx], tuple(fv.feature_names[i] for i in idx))


def stream_features(stream, window_seconds=6.0, cutoff_hz=5.0):
    """Filter, segment and featurize one stream.

    Returns ``(X, y, start_ms, names)`` with ``y`` = -1 for unknown windows.
    """
    if len(stream) == 0:
        return np.empty((0, 15 * stream.n_channels)), np.empty(0, int), np.empty(0), \
            feature_names(stream.channel_names)
    filtered = low_pass_filter(stream, cutoff_hz)
    segs = segment(filtered, window_seconds, 0.5)
    names = feature_names(stream.channel_names)
    if not segs:
        return np.empty((0, len(names))), np.empty(0, int), np.empty(0), names
    X = np.vstack([extract_features(s).values for s in segs])
    y = np.array([UNLABELED if s.window_label is None else s.window_label for s in segs])
    start = np.array([s.start_ms for s in segs])
    return X, y, start, names
