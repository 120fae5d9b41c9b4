"""Pool-based active learning: propagate, score, query, rebalance, repeat."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from pals import N_CLASSES, UNLABELED
from pals.errors import ConfigurationError, OracleError, RunAborted
from pals.graph import (
    Instance,
    KernelConfig,
    PropagationConfig,
    Standardizer,
    add_labeled_node,
    build_graph,
    propagate_labels,
)
from pals.selection import (
    InformativenessScore,
    QueryBudget,
    entropies,
    farthest_point_select,
    select_top,
    smote_balance,
    uniform_select,
)

log = logging.getLogger(__name__)

SELECTIONS = ("entropy", "uniform")


@dataclass
class OfflineConfig:
    budget: int = 50
    iterations: int = 10
    kernel: KernelConfig = field(default_factory=KernelConfig)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    smote_k: int = 5
    smote: bool = True
    selection: str = "entropy"
    standardize: bool = True
    seed: int = 0

    def problems(self):
        out = []
        if self.iterations < 1:
            out.append(f"iterations must be >= 1 (got {self.iterations})")
        if self.budget < max(self.iterations, 1):
            out.append(f"budget {self.budget} must be >= iterations {self.iterations}")
        elif self.iterations >= 1 and self.budget % self.iterations:
            out.append(f"budget {self.budget} is not divisible by iterations {self.iterations}")
        if self.smote_k < 1:
            out.append("smote_k must be >= 1")
        if self.selection not in SELECTIONS:
            out.append(f"selection must be one of {SELECTIONS}, got {self.selection!r}")
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ConfigurationError("; ".join(problems), problems)

    @property
    def per_iteration(self):
        return self.budget // self.iterations


@dataclass
class QueryRecord:
    iteration: int
    instance_id: object
    entropy: float
    label: int
    strategy: str


@dataclass
class OfflineResult:
    graph: object
    scaler: Standardizer | None
    queries: list
    iteration_stats: list
    budget: QueryBudget


def infer_unlabeled(graph):
    """(id, distribution) for every unlabeled, non-synthetic node."""
    mask = (graph.labels == UNLABELED) & ~graph.synthetic
    return [(graph.ids[i], graph.distributions[i].copy()) for i in np.flatnonzero(mask)]


def _missing_class(graph):
    real = graph.labels[(graph.labels != UNLABELED) & ~graph.synthetic]
    return len(np.unique(real)) < N_CLASSES


def _rebalance(graph, k, rng, next_id):
    """Oversample the labeled pool (real and earlier synthetic nodes) to equal
    class counts; new synthetic nodes get negative ids."""
    lab = np.flatnonzero(graph.labels != UNLABELED)
    res = smote_balance(graph.features[lab], graph.labels[lab], k, rng)
    added = 0
    for row, y in zip(res.features[res.n_original:], res.labels[res.n_original:]):
        add_labeled_node(graph, Instance(next_id, row), int(y), synthetic=True)
        next_id -= 1
        added += 1
    return next_id, added, res.warning


def run_offline(labeled, unlabeled, oracle, config, on_iteration=None):
    """Budgeted pool-based loop.

    ``labeled``/``unlabeled`` are lists of ``Instance`` (the latter's
    ``true_label`` is ignored; labels only come from ``oracle``). Each of the
    ``config.iterations`` rounds queries ``budget / iterations`` instances:
    the highest-entropy ones, or uniform draws for the baseline. While the
    labeled pool lacks a class, entropy rounds fall back to farthest-point
    sampling. After each round the labeled pool is SMOTE-balanced and labels
    are re-propagated.

    ``on_iteration(iteration, graph, scaler)`` is called after every round
    (iteration 0 = before any query). Oracle failure raises ``RunAborted``
    carrying the partial query log.
    """
    config.validate()
    unlabeled = list(unlabeled)
    labeled = list(labeled)
    if not unlabeled:
        raise ConfigurationError("unlabeled pool is empty")
    if config.budget > len(unlabeled):
        raise ConfigurationError(
            f"budget {config.budget} exceeds unlabeled pool size {len(unlabeled)}")
    seq = np.random.SeedSequence(config.seed)
    rng_select, rng_smote = (np.random.default_rng(s) for s in seq.spawn(2))

    pool = [Instance(i.id, i.features, i.true_label) for i in labeled]
    pool += [Instance(i.id, i.features) for i in unlabeled]
    X = np.vstack([i.features for i in pool])
    scaler = Standardizer().fit(X) if config.standardize else None
    if scaler is not None:
        for inst, row in zip(pool, scaler.transform(X)):
            inst.features = row
    graph = build_graph(pool, config.kernel)
    next_id = -1
    budget = QueryBudget(config.budget)
    queries = []
    stats = []
    if graph.labeled_mask.any():
        if config.smote:
            next_id, _, _ = _rebalance(graph, config.smote_k, rng_smote, next_id)
        propagate_labels(graph, config.propagation, warm_start=False)
    if on_iteration is not None:
        on_iteration(0, graph, scaler)

    delta = config.per_iteration
    for it in range(1, config.iterations + 1):
        candidates = infer_unlabeled(graph)
        cand_ids = [c[0] for c in candidates]
        cand_h = entropies(np.array([c[1] for c in candidates]))
        h_of = dict(zip(cand_ids, cand_h.tolist()))
        if config.selection == "uniform":
            strategy = "uniform"
            picked = uniform_select(cand_ids, delta, rng_select)
        elif _missing_class(graph):
            strategy = "farthest"
            rows = [graph.index_of(c) for c in cand_ids]
            anchors = graph.features[(graph.labels != UNLABELED) & ~graph.synthetic]
            picked = [cand_ids[j] for j in
                      farthest_point_select(graph.features[rows], delta, anchors)]
        else:
            strategy = "entropy"
            picked = select_top(
                [InformativenessScore(c, h) for c, h in zip(cand_ids, cand_h.tolist())],
                delta)
        picked.sort(key=lambda c: (-h_of[c], c))
        for node_id in picked:
            budget.spend()
            try:
                y = int(oracle.query(node_id))
            except OracleError as exc:
                raise RunAborted(f"oracle failed on {node_id!r}: {exc}", queries) from exc
            queries.append(QueryRecord(it, node_id, h_of[node_id], y, strategy))
            add_labeled_node(graph, graph.instance(node_id), y)
        n_synth = 0
        warning = None
        if config.smote:
            next_id, n_synth, warning = _rebalance(graph, config.smote_k, rng_smote, next_id)
        propagate_labels(graph, config.propagation)
        lab = graph.labels[graph.labels != UNLABELED]
        stats.append({
            "iteration": it,
            "strategy": strategy,
            "queries": len(picked),
            "labeled_real": int(((graph.labels != UNLABELED) & ~graph.synthetic).sum()),
            "synthetic_added": n_synth,
            "labeled_eating": int((lab == 1).sum()),
            "labeled_non_eating": int((lab == 0).sum()),
            "propagation_iterations": graph.last_iterations,
            "smote_warning": warning or "",
        })
        log.debug("iteration %d: %s", it, stats[-1])
        if on_iteration is not None:
            on_iteration(it, graph, scaler)
    return OfflineResult(graph, scaler, queries, stats, budget)
