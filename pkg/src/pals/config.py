"""Run configuration: one JSON file plus command-line overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from pals.errors import ConfigurationError
from pals.graph import KernelConfig, PropagationConfig
from pals.offline import OfflineConfig
from pals.streaming import POLICIES, StreamConfig

DEFAULT_SWEEP = (5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60)


@dataclass
class RunConfig:
    # signal pipeline
    window_seconds: float = 6.0
    cutoff_hz: float = 5.0
    chi2_keep: int | None = None
    # proximity model
    kernel: str = "knn"
    knn_k: int = 7
    rbf_sigma: float = 1.0
    propagation_tolerance: float = 1e-6
    propagation_max_iterations: int = 1000
    stream_propagation_max_iterations: int = 50
    # offline loop
    budget: int = 50
    iterations: int = 10
    selection: str = "entropy"
    smote_k: int = 5
    train_fraction: float = 0.2
    # real-time loop
    policy: str = "adaptive"
    interval_budget: int = 60
    interval_s: float = 3600.0
    lab_labeled_fraction: float = 0.2
    stream_test_fraction: float = 0.3
    budgets: list = field(default_factory=lambda: list(DEFAULT_SWEEP))
    # experiments
    seed: int | None = None
    n_seeds: int = 10
    synthetic: dict = field(default_factory=dict)
    offline_datasets: list = field(default_factory=lambda: ["SW3S", "SW6S"])
    lab_dataset: str = "SW3S"
    stream_dataset: str = "SW3U"
    data_dir: str | None = None
    jobs: int = 1

    def problems(self):
        out = []
        if self.kernel not in ("knn", "rbf"):
            out.append(f"kernel must be knn or rbf, got {self.kernel!r}")
        if self.knn_k < 1:
            out.append("knn_k must be >= 1")
        if self.rbf_sigma <= 0:
            out.append("rbf_sigma must be > 0")
        if self.propagation_tolerance <= 0:
            out.append("propagation_tolerance must be > 0")
        if self.propagation_max_iterations < 1 or self.stream_propagation_max_iterations < 1:
            out.append("propagation iteration caps must be >= 1")
        if self.policy not in POLICIES:
            out.append(f"policy must be one of {', '.join(POLICIES)}, got {self.policy!r}")
        if self.interval_budget < 0:
            out.append("interval_budget must be >= 0")
        if self.interval_s <= 0:
            out.append("interval_s must be > 0")
        if not 0 < self.train_fraction < 1:
            out.append("train_fraction must be in (0, 1)")
        if not 0 < self.stream_test_fraction < 1:
            out.append("stream_test_fraction must be in (0, 1)")
        if not 0 < self.lab_labeled_fraction <= 1:
            out.append("lab_labeled_fraction must be in (0, 1]")
        if self.n_seeds < 1:
            out.append("n_seeds must be >= 1")
        if self.jobs < 1:
            out.append("jobs must be >= 1")
        if any(int(b) < 0 for b in self.budgets):
            out.append("budgets must be >= 0")
        out += OfflineConfig(budget=self.budget, iterations=self.iterations,
                             smote_k=self.smote_k, selection=self.selection).problems()
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(problems),
                                     problems)
        return self

    def kernel_config(self, kind=None):
        kind = kind or self.kernel
        if kind == "rbf":
            return KernelConfig("rbf", self.knn_k, self.rbf_sigma)
        return KernelConfig("knn", self.knn_k)

    def propagation(self, streaming=False):
        cap = self.stream_propagation_max_iterations if streaming \
            else self.propagation_max_iterations
        return PropagationConfig(cap, self.propagation_tolerance)

    def offline_config(self, seed=None, **overrides):
        params = dict(budget=self.budget, iterations=self.iterations,
                      kernel=self.kernel_config(), propagation=self.propagation(),
                      smote_k=self.smote_k, selection=self.selection,
                      seed=(self.seed or 0) if seed is None else seed)
        params.update(overrides)
        return OfflineConfig(**params)

    def stream_config(self, policy=None, interval_budget=None, static_value=None):
        return StreamConfig(policy or self.policy,
                            self.interval_budget if interval_budget is None else interval_budget,
                            self.interval_s * 1000.0, static_value,
                            self.propagation(streaming=True))

    def seeds(self):
        if self.seed is None:
            raise ConfigurationError("a seed is required (--seed)")
        return [self.seed + i for i in range(self.n_seeds)]

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name, raw, current):
    if isinstance(raw, str):
        text = raw.strip()
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
    else:
        value = raw
    if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if name == "budgets" and isinstance(value, str):
        value = [int(v) for v in value.split(",") if v.strip()]
    return value


def apply_overrides(cfg, overrides):
    """Set ``RunConfig`` fields from a mapping of name -> value (strings are
    parsed as JSON when possible). Unknown names are configuration errors."""
    unknown = [k for k in overrides if k not in _FIELDS]
    if unknown:
        raise ConfigurationError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    for name, raw in overrides.items():
        if raw is None:
            continue
        setattr(cfg, name, _coerce(name, raw, getattr(cfg, name)))
    return cfg


def load_config(path=None, overrides=None):
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigurationError(f"{path}: top level must be an object")
        apply_overrides(cfg, doc)
    if overrides:
        apply_overrides(cfg, overrides)
    return cfg
