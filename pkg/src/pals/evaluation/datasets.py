"""Session CSV / manifest loading and feature-table I/O.

A dataset directory holds one ``manifest.json`` and one CSV per session::

    t_ms,ch0,ch1,ch2,label
    0,0.12,9.71,0.33,talking
    20,0.15,9.69,0.31,talking

The manifest declares ``sampling_rate_hz``, ``channels`` and
``eating_labels``; ``other_labels`` (optional) closes the label vocabulary
so that typos surface as errors. ``subjects`` (optional) maps session file
names to subject ids; otherwise the file stem before the first ``_`` is the
subject.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pals import EATING, NON_EATING, UNLABELED
from pals.errors import ConfigurationError, DataError, ParseError
from pals.pipeline import SensorStream

log = logging.getLogger(__name__)

DATA_DIR_ENV = "PALS_DATA_DIR"


@dataclass
class Manifest:
    sampling_rate_hz: float
    channels: list
    eating_labels: set
    other_labels: set | None = None
    subjects: dict = field(default_factory=dict)
    path: Path | None = None

    def label_value(self, label):
        if label == "":
            return UNLABELED
        if label in self.eating_labels:
            return EATING
        if self.other_labels is None or label in self.other_labels:
            return NON_EATING
        raise DataError(f"label {label!r} is not declared in the manifest")

    def subject_of(self, session_path):
        name = Path(session_path).name
        return self.subjects.get(name, Path(session_path).stem.split("_")[0])


def load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise ConfigurationError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    missing = [k for k in ("sampling_rate_hz", "channels", "eating_labels") if k not in doc]
    if missing:
        raise ConfigurationError(f"{path}: missing keys {missing}")
    rate = float(doc["sampling_rate_hz"])
    if rate <= 0:
        raise ConfigurationError(f"{path}: sampling_rate_hz must be positive")
    other = doc.get("other_labels")
    return Manifest(rate, list(doc["channels"]), set(doc["eating_labels"]),
                    None if other is None else set(other), dict(doc.get("subjects", {})),
                    path)


def load_session(path, manifest):
    """Validated, time-ordered stream of one session file.

    Raises ``ParseError`` (with line number) on malformed rows and
    ``DataError`` on non-increasing timestamps or undeclared labels. An empty
    file yields an empty stream and a warning.
    """
    path = Path(path)
    n_ch = len(manifest.channels)
    t, vals, labels, eating = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            warnings.warn(f"{path}: empty session file", RuntimeWarning, stacklevel=2)
            return SensorStream(np.empty(0), np.empty((0, n_ch)), manifest.sampling_rate_hz,
                                channel_names=manifest.channels)
        if len(header) != n_ch + 2 or header[0] != "t_ms" or header[-1] != "label":
            raise ParseError(
                f"header must be t_ms,<{n_ch} channels>,label; got {','.join(header)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_ch + 2:
                raise ParseError(f"expected {n_ch + 2} fields, got {len(row)}", lineno)
            try:
                ts = float(row[0])
                ch = [float(v) for v in row[1:-1]]
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if t and ts <= t[-1]:
                raise DataError(f"{path}: line {lineno}: timestamp {ts} not after {t[-1]}")
            label = row[-1].strip()
            try:
                eating.append(manifest.label_value(label))
            except DataError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            t.append(ts)
            vals.append(ch)
            labels.append(label or None)
    if not t:
        warnings.warn(f"{path}: session has no samples", RuntimeWarning, stacklevel=2)
        return SensorStream(np.empty(0), np.empty((0, n_ch)), manifest.sampling_rate_hz,
                            channel_names=manifest.channels)
    return SensorStream(t, vals, manifest.sampling_rate_hz, labels, eating, manifest.channels)


def session_files(dataset_dir):
    return sorted(p for p in Path(dataset_dir).glob("*.csv") if p.is_file())


def data_root(explicit=None):
    root = explicit or os.environ.get(DATA_DIR_ENV)
    return Path(root) if root else None


def find_dataset(name, root=None):
    """Directory of dataset ``name`` under the data root, or None."""
    root = data_root(root)
    if root is None:
        return None
    cand = root / name
    if (cand / "manifest.json").exists() and session_files(cand):
        return cand
    return None


def write_feature_csv(path, X, y, start_ms, names):
    """One row per window: features, ``label`` (0/1, empty if unknown), start."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names) + ["label", "segment_start_ms"])
        for row, lab, st in zip(np.asarray(X), np.asarray(y), np.asarray(start_ms)):
            w.writerow([repr(float(v)) for v in row]
                       + ["" if lab == UNLABELED else int(lab), repr(float(st))])


def read_feature_csv(path):
    """Returns ``(X, y, start_ms, names)``; unknown labels come back as -1."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[-2:] != ["label", "segment_start_ms"]:
            raise ParseError(f"{path}: not a feature CSV", 1)
        names = tuple(header[:-2])
        X, y, st = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}: expected {len(header)} fields", lineno)
            try:
                X.append([float(v) for v in row[:-2]])
                y.append(UNLABELED if row[-2] == "" else int(row[-2]))
                st.append(float(row[-1]))
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", lineno) from None
    X = np.array(X, dtype=float).reshape(len(X), len(names))
    return X, np.array(y, dtype=int), np.array(st, dtype=float), names
