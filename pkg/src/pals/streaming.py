"""Real-time active learning over a stream of windows.

Every arriving instance is predicted once. It is sent to the oracle when its
entropy reaches the current threshold and the interval still has budget;
otherwise it is dropped. Three threshold policies are supported:

``static``
    one value fixed from in-lab entropies and the budget ratio;
``adaptive``
    after each arrival the threshold becomes the ``floor((t/T) * budget)``-th
    largest entropy seen this interval, which spreads queries evenly in time;
``best``
    two-pass replay with hindsight: the threshold for an interval is its
    ``budget``-th largest entropy under the model at the interval start.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from pals.errors import ConfigurationError, OracleError, UsageError
from pals.graph import PropagationConfig, add_labeled_node, predict_many, propagate_labels
from pals.selection import QueryBudget, entropies

POLICIES = ("static", "adaptive", "best")
HOUR_MS = 3_600_000.0
NEVER = math.inf


def _neg(v):
    return -v


@dataclass
class ThresholdState:
    """Threshold bookkeeping for one interval.

    ``history`` holds this interval's entropies in non-increasing order.
    """

    policy: str = "adaptive"
    lam: float = NEVER
    interval_ms: float = HOUR_MS
    interval_budget: int = 60
    elapsed_ms: float = 0.0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigurationError(f"unknown threshold policy {self.policy!r}")
        if self.interval_ms <= 0:
            raise ConfigurationError("interval length must be positive")
        if self.interval_budget < 0:
            raise ConfigurationError("interval budget must be >= 0")

    def record(self, e):
        bisect.insort(self.history, e, key=_neg)


def adaptive_lambda(state, new_entropy):
    """Insert ``new_entropy`` and move the threshold to the budget-proportional rank.

    The rank is ``floor((t / T) * budget)`` counted from the largest entropy
    (1-based); rank 0 means nothing may be queried yet and ranks past the end
    fall back to the smallest entropy seen.
    """
    state.record(float(new_entropy))
    t = min(max(state.elapsed_ms, 0.0), state.interval_ms)
    index = math.floor(t * state.interval_budget / state.interval_ms)
    if index == 0:
        lam = NEVER
    elif index > len(state.history):
        lam = state.history[-1]
    else:
        lam = state.history[index - 1]
    state.lam = lam
    return lam


def _order_statistic(values, rank):
    ordered = sorted((float(v) for v in values), reverse=True)
    return ordered[min(rank, len(ordered)) - 1]


def static_lambda(training_entropies, budget_ratio):
    """The ``ceil(budget_ratio * n)``-th largest in-lab entropy."""
    values = list(training_entropies)
    if not values:
        raise ConfigurationError("static threshold needs in-lab entropies")
    if not 0 < budget_ratio <= 1:
        raise ConfigurationError(f"budget_ratio must be in (0, 1], got {budget_ratio}")
    # guard against 0.1 * 30 = 3.0000000000000004
    rank = max(1, math.ceil(budget_ratio * len(values) - 1e-9))
    return _order_statistic(values, rank)


def best_lambda(entropies_in_interval, delta):
    """The ``delta``-th largest entropy of the interval (all of them if fewer)."""
    values = list(entropies_in_interval)
    if delta <= 0 or not values:
        return NEVER
    return _order_statistic(values, delta)


@dataclass
class StreamEvent:
    t_ms: float
    instance_id: object
    entropy: float
    lam: float
    decision: str
    predicted_label: int
    true_label: int | None = None
    flagged: str | None = None
    interval: int = 0


class QueryScheduler:
    """Owns the threshold state and the per-interval budget.

    Budgets do not roll over: each interval starts again with
    ``interval_budget`` queries.
    """

    def __init__(self, policy, interval_budget, interval_ms=HOUR_MS,
                 static_value=None, t0_ms=0.0):
        self.state = ThresholdState(policy, NEVER, interval_ms, interval_budget)
        if policy == "static":
            if static_value is None:
                raise ConfigurationError("static policy needs a threshold value")
            self.state.lam = float(static_value)
        self.static_value = static_value
        self.t0_ms = float(t0_ms)
        self.interval = None
        self.budget = QueryBudget(interval_budget)
        self.queries_per_interval = {}

    @property
    def policy(self):
        return self.state.policy

    def interval_of(self, t_ms):
        return int((t_ms - self.t0_ms) // self.state.interval_ms)

    def advance(self, t_ms):
        """Move the clock to ``t_ms``; returns True when a new interval starts."""
        idx = self.interval_of(t_ms)
        if self.interval is not None and idx < self.interval:
            raise UsageError("stream time went backwards")
        fresh = idx != self.interval
        if fresh:
            self.interval = idx
            self.budget = QueryBudget(self.state.interval_budget)
            self.state.history = []
            if self.policy != "static":
                self.state.lam = NEVER
        self.state.elapsed_ms = (t_ms - self.t0_ms) - idx * self.state.interval_ms
        return fresh

    def set_interval_threshold(self, lam):
        if self.policy != "best":
            raise UsageError("only the best policy takes a precomputed threshold")
        self.state.lam = float(lam)

    def wants(self, e):
        return e >= self.state.lam and self.budget.remaining > 0

    def charge(self):
        self.budget.spend()
        self.queries_per_interval[self.interval] = \
            self.queries_per_interval.get(self.interval, 0) + 1

    def refund(self):
        self.budget.refund()
        self.queries_per_interval[self.interval] -= 1

    def observe(self, e):
        """Threshold update, run after the decision on the instance."""
        if self.policy == "adaptive":
            adaptive_lambda(self.state, e)
        else:
            self.state.record(float(e))


def simulate_decisions(times_ms, entropy_values, scheduler):
    """Threshold decisions for a fixed entropy sequence (no model, no oracle).

    Used for best-threshold replays and for checking the temporal spread of
    the adaptive policy. Returns a boolean array of queried positions.
    """
    times = np.asarray(times_ms, dtype=float)
    ents = np.asarray(entropy_values, dtype=float)
    queried = np.zeros(len(times), dtype=bool)
    start = 0
    while start < len(times):
        idx = scheduler.interval_of(times[start])
        stop = start
        while stop < len(times) and scheduler.interval_of(times[stop]) == idx:
            stop += 1
        scheduler.advance(times[start])
        if scheduler.policy == "best":
            scheduler.set_interval_threshold(
                best_lambda(ents[start:stop], scheduler.state.interval_budget))
        for i in range(start, stop):
            scheduler.advance(times[i])
            if scheduler.wants(ents[i]):
                scheduler.charge()
                queried[i] = True
            scheduler.observe(ents[i])
        start = stop
    return queried


@dataclass
class StreamConfig:
    policy: str = "adaptive"
    interval_budget: int = 60
    interval_ms: float = HOUR_MS
    static_value: float | None = None
    propagation: PropagationConfig = field(
        default_factory=lambda: PropagationConfig(max_iterations=50))

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigurationError(
                f"unknown policy {self.policy!r}; choose from {', '.join(POLICIES)}")


def step(graph, x, t_ms, scheduler, oracle, propagation=None, context=None,
         decision_entropy=None):
    """Process one arrival: predict, maybe query, update the model.

    Mutates ``graph`` and ``scheduler``; returns the ``StreamEvent``. A
    failed or declined oracle call refunds the budget and flags the event.
    ``decision_entropy`` replaces the live entropy in the query decision
    (the best policy's precomputed first-pass value).
    """
    scheduler.advance(t_ms)
    p = predict_many(graph, x.features.reshape(1, -1))[0]
    e = float(entropies(p)) if decision_entropy is None else float(decision_entropy)
    predicted = int(np.argmax(p))
    lam = scheduler.state.lam
    event = StreamEvent(float(t_ms), x.id, e, lam, "skipped", predicted,
                        interval=scheduler.interval)
    if scheduler.wants(e):
        scheduler.charge()
        try:
            y = oracle.query(x.id, context)
        except OracleError as exc:
            scheduler.refund()
            event.flagged = str(exc)
        else:
            event.decision = "queried"
            event.true_label = int(y)
            add_labeled_node(graph, x, y)
            propagate_labels(graph, propagation or PropagationConfig(max_iterations=50))
    scheduler.observe(e)
    return event


@dataclass
class StreamResult:
    graph: object
    events: list
    queries_per_interval: dict


def run_stream(graph, arrivals, oracle, config, t0_ms=None, contexts=None):
    """Run the real-time loop over ``arrivals`` = [(t_ms, Instance), ...].

    Skipped instances are not added to the graph. For the best policy the
    first pass scores every instance of an interval under the interval-start
    model and the threshold is the budget-th largest score. After each query
    the rest of the interval is rescored under the updated model and the
    threshold becomes the remaining-budget-th largest of those scores, so
    each full interval spends exactly its budget.
    """
    arrivals = list(arrivals)
    if not arrivals:
        return StreamResult(graph, [], {})
    times = np.array([t for t, _ in arrivals], dtype=float)
    if np.any(np.diff(times) < 0):
        raise UsageError("arrivals must be in time order")
    if len(graph) == 0:
        raise UsageError("the streaming model must be seeded before use")
    seen = set()
    for _, inst in arrivals:
        if inst.id in seen or inst.id in graph:
            raise UsageError(f"instance {inst.id!r} arrives twice")
        seen.add(inst.id)
    t0 = times[0] if t0_ms is None else t0_ms
    sched = QueryScheduler(config.policy, config.interval_budget, config.interval_ms,
                           config.static_value, t0)
    events = []
    start = 0
    while start < len(arrivals):
        idx = sched.interval_of(times[start])
        stop = start
        while stop < len(arrivals) and sched.interval_of(times[stop]) == idx:
            stop += 1
        first = None
        if config.policy == "best":
            X = np.vstack([arrivals[i][1].features for i in range(start, stop)])
            first = entropies(predict_many(graph, X))
            sched.advance(times[start])
            sched.set_interval_threshold(best_lambda(first, config.interval_budget))
        for i in range(start, stop):
            t, inst = arrivals[i]
            ctx = contexts[i] if contexts is not None else None
            e0 = None if first is None else first[i - start]
            ev = step(graph, inst, t, sched, oracle, config.propagation, context=ctx,
                      decision_entropy=e0)
            events.append(ev)
            if first is not None and ev.decision == "queried" and i + 1 < stop:
                # the model changed: rescore the rest of the interval
                X = np.vstack([arrivals[j][1].features for j in range(i + 1, stop)])
                first[i + 1 - start:] = entropies(predict_many(graph, X))
                sched.set_interval_threshold(
                    best_lambda(first[i + 1 - start:], sched.budget.remaining))
        start = stop
    return StreamResult(graph, events, dict(sched.queries_per_interval))


@dataclass
class SeedModel:
    graph: object
    scaler: object
    training_entropies: np.ndarray


def seed_model(lab_X, lab_y, labeled_fraction=0.2, kernel=None, propagation=None, seed=0):
    """Initial streaming model from in-lab data.

    A stratified ``labeled_fraction`` of the lab windows keeps its labels;
    the rest join the graph unlabeled and their propagated entropies are the
    in-lab reference for the static threshold. Features are z-scored with
    lab statistics, and the same scaler must be applied to stream windows.
    """
    from pals.graph import Instance, KernelConfig, Standardizer, build_graph

    lab_X = np.asarray(lab_X, dtype=float)
    lab_y = np.asarray(lab_y, dtype=int)
    if not 0 < labeled_fraction <= 1:
        raise ConfigurationError("labeled_fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    keep = set()
    for c in np.unique(lab_y):
        members = np.flatnonzero(lab_y == c)
        m = min(len(members), max(2, int(round(labeled_fraction * len(members)))))
        keep.update(rng.choice(members, m, replace=False).tolist())
    scaler = Standardizer().fit(lab_X)
    Xs = scaler.transform(lab_X)
    instances = [Instance(i, Xs[i], int(lab_y[i]) if i in keep else None)
                 for i in range(len(lab_y))]
    graph = build_graph(instances, kernel or KernelConfig())
    propagate_labels(graph, propagation)
    unl = graph.labels == -1
    train_e = entropies(graph.distributions[unl]) if unl.any() else np.zeros(1)
    return SeedModel(graph, scaler, train_e)
