import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pals.errors import ConfigurationError, OracleError, UsageError
from pals.evaluation.synthetic import SyntheticStreamSpec, generate_synthetic
from pals.graph import Instance, build_knn_graph, propagate_labels
from pals.oracle import ReplayOracle
from pals.streaming import (
    NEVER,
    QueryScheduler,
    StreamConfig,
    ThresholdState,
    adaptive_lambda,
    best_lambda,
    run_stream,
    seed_model,
    simulate_decisions,
    static_lambda,
    step,
)

HOUR = 3_600_000.0


def balanced_graph():
    """Eating at -1, non-eating at +1: the origin has entropy exactly 1."""
    g = build_knn_graph([Instance(0, [-1.0], 1), Instance(1, [1.0], 0),
                         Instance(2, [40.0], 0)], 2)
    return propagate_labels(g)


class Declining:
    n_queries = 0

    def query(self, instance_id, context=None):
        self.n_queries += 1
        raise OracleError("declined")


class TestStep:
    def test_query_spends_budget(self):
        sched = QueryScheduler("static", 3, HOUR, static_value=0.7)
        ev = step(balanced_graph(), Instance(10, [0.0]), 0.0, sched, ReplayOracle({10: 1}))
        assert ev.decision == "queried" and ev.entropy == 1.0 and ev.lam == 0.7
        assert sched.budget.remaining == 2

    def test_equal_entropy_is_queried(self):
        sched = QueryScheduler("static", 3, HOUR, static_value=1.0)
        ev = step(balanced_graph(), Instance(10, [0.0]), 0.0, sched, ReplayOracle({10: 1}))
        assert ev.decision == "queried"

    def test_zero_budget_never_queries(self):
        sched = QueryScheduler("static", 0, HOUR, static_value=0.0)
        ev = step(balanced_graph(), Instance(10, [0.0]), 0.0, sched, ReplayOracle({10: 1}))
        assert ev.decision == "skipped"

    def test_decline_refunds_and_flags(self):
        g = balanced_graph()
        sched = QueryScheduler("static", 3, HOUR, static_value=0.5)
        ev = step(g, Instance(10, [0.0]), 0.0, sched, Declining())
        assert ev.decision == "skipped" and ev.flagged
        assert sched.budget.remaining == 3 and 10 not in g

    def test_model_updated_on_query(self):
        g = balanced_graph()
        sched = QueryScheduler("static", 3, HOUR, static_value=0.5)
        step(g, Instance(10, [0.0]), 0.0, sched, ReplayOracle({10: 1}))
        assert 10 in g and g.labels[g.index_of(10)] == 1


class TestAdaptive:
    def test_hand_trace(self):
        s = ThresholdState("adaptive", interval_ms=HOUR, interval_budget=4,
                           history=[0.9, 0.5, 0.3])
        s.elapsed_ms = 0.5 * HOUR
        assert adaptive_lambda(s, 0.7) == 0.7
        assert s.history == [0.9, 0.7, 0.5, 0.3]

    def test_start_is_sentinel(self):
        s = ThresholdState("adaptive", interval_ms=HOUR, interval_budget=60)
        assert adaptive_lambda(s, 0.4) == NEVER

    def test_end_is_minimum(self):
        s = ThresholdState("adaptive", interval_ms=HOUR, interval_budget=10,
                           history=[0.8, 0.6])
        s.elapsed_ms = HOUR
        assert adaptive_lambda(s, 0.1) == 0.1

    @settings(max_examples=200)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(1, 60))
    def test_non_increasing_in_index(self, ents, budget):
        lams = []
        for frac in np.linspace(0, 1, 11):
            s = ThresholdState("adaptive", interval_ms=HOUR, interval_budget=budget,
                               history=sorted(ents[:-1], reverse=True))
            s.elapsed_ms = frac * HOUR
            lams.append(adaptive_lambda(s, ents[-1]))
        assert all(a >= b for a, b in zip(lams, lams[1:]))


class TestStaticBest:
    def test_static_examples(self):
        e = [0.2, 0.4, 0.6, 0.8]
        assert static_lambda(e, 0.25) == 0.8
        assert static_lambda(e, 0.5) == 0.6
        assert static_lambda(e, 1.0) == 0.2
        with pytest.raises(ConfigurationError):
            static_lambda([], 0.5)

    def test_best_examples(self):
        assert best_lambda([0.1, 0.5, 0.9], 1) == 0.9
        assert best_lambda([0.1, 0.5, 0.9], 5) == 0.1
        assert best_lambda([0.1, 0.5], 0) == NEVER

    @settings(max_examples=100)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=100, unique=True),
           st.integers(1, 40))
    def test_best_replay_count(self, ents, delta):
        t = np.linspace(0, HOUR - 1, len(ents))
        q = simulate_decisions(t, ents, QueryScheduler("best", delta, HOUR))
        assert q.sum() == min(delta, len(ents))

    def test_best_needs_precomputed_only(self):
        with pytest.raises(UsageError):
            QueryScheduler("adaptive", 3).set_interval_threshold(0.5)

    def test_static_requires_value(self):
        with pytest.raises(ConfigurationError):
            QueryScheduler("static", 3)


class TestScheduler:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10**6), st.sampled_from(["adaptive", "best", "static"]),
           st.integers(0, 30))
    def test_budget_bound_per_interval(self, seed, policy, budget):
        rng = np.random.default_rng(seed)
        t = np.sort(rng.uniform(0, 3 * HOUR, 300))
        e = rng.random(300)
        sched = QueryScheduler(policy, budget, HOUR, static_value=0.3)
        q = simulate_decisions(t, e, sched)
        for k in range(3):
            assert q[(t // HOUR) == k].sum() <= budget

    def test_no_rollover(self):
        t = np.array([0.0, 1.0, HOUR + 1, HOUR + 2, HOUR + 3])
        sched = QueryScheduler("static", 2, HOUR, static_value=0.0)
        q = simulate_decisions(t, np.ones(5), sched)
        assert q.tolist() == [True, True, True, True, False]

    def test_time_backwards(self):
        sched = QueryScheduler("adaptive", 2, HOUR)
        sched.advance(2 * HOUR)
        with pytest.raises(UsageError):
            sched.advance(0.0)

    def test_temporal_spread_iid(self):
        delta = 60
        for seed in range(20):
            rng = np.random.default_rng(seed)
            t = np.arange(1200) * 3000.0
            q = simulate_decisions(t, rng.random(1200), QueryScheduler("adaptive", delta, HOUR))
            quarters = np.bincount((t[q] // (HOUR / 4)).astype(int), minlength=4)
            assert np.all(quarters >= 0.25 * delta / 4) and np.all(quarters <= 2.5 * delta / 4)


@pytest.fixture(scope="module")
def synthetic():
    spec = SyntheticStreamSpec(duration_s=2 * 3600.0, seed=5)
    return generate_synthetic(spec)


def stream_once(data, policy, budget=20, static=None):
    sm = seed_model(data.lab_X, data.lab_y, 0.2, seed=5)
    base = len(data.lab_y)
    X = sm.scaler.transform(data.stream_X)
    arrivals = [(float(t), Instance(base + i, X[i])) for i, t in enumerate(data.stream_t_ms)]
    oracle = ReplayOracle({base + i: int(v) for i, v in enumerate(data.stream_y)})
    if policy == "static" and static is None:
        static = static_lambda(sm.training_entropies, 0.05)
    return run_stream(sm.graph, arrivals, oracle, StreamConfig(policy, budget, HOUR, static))


class TestRunStream:
    @pytest.mark.parametrize("policy", ["static", "adaptive", "best"])
    def test_one_event_per_arrival_and_bounds(self, synthetic, policy):
        res = stream_once(synthetic, policy)
        assert len(res.events) == len(synthetic.stream_t_ms)
        assert len({e.instance_id for e in res.events}) == len(res.events)
        assert all(v <= 20 for v in res.queries_per_interval.values())
        for e in res.events:
            if e.decision == "queried":
                assert e.entropy >= e.lam

    def test_reproducible(self, synthetic):
        a = stream_once(synthetic, "adaptive")
        b = stream_once(synthetic, "adaptive")
        assert [(e.t_ms, e.entropy, e.lam, e.decision) for e in a.events] == \
            [(e.t_ms, e.entropy, e.lam, e.decision) for e in b.events]

    def test_rejects_bad_arrivals(self):
        g = balanced_graph()
        cfg = StreamConfig("adaptive", 3)
        with pytest.raises(UsageError):
            run_stream(g, [(1.0, Instance(5, [0.0])), (0.0, Instance(6, [0.0]))],
                       ReplayOracle({}), cfg)
        with pytest.raises(UsageError):
            run_stream(g, [(0.0, Instance(5, [0.0])), (1.0, Instance(5, [0.0]))],
                       ReplayOracle({}), cfg)
        with pytest.raises(UsageError):
            run_stream(g, [(0.0, Instance(0, [0.0]))], ReplayOracle({}), cfg)

    def test_unknown_policy(self):
        with pytest.raises(ConfigurationError):
            StreamConfig("greedy")


def test_seed_model_stratified():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 2))
    y = np.array([1] * 10 + [0] * 40)
    sm = seed_model(X, y, 0.2, seed=1)
    lab = sm.graph.labels[sm.graph.labels >= 0]
    assert (lab == 1).sum() == 2 and (lab == 0).sum() == 8
    assert len(sm.training_entropies) == 40
    assert math.isclose(float(sm.scaler.transform(X).mean()), 0.0, abs_tol=1e-12)


def test_best_spends_exact_budget_live(synthetic):
    res = stream_once(synthetic, "best", budget=20)
    assert set(res.queries_per_interval.values()) == {20}
