import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import harmonic_solution
from pals.errors import ConfigurationError, OracleError, RunAborted
from pals.graph import Instance, KernelConfig, build_knn_graph, predict_many, propagate_labels
from pals.offline import OfflineConfig, infer_unlabeled, run_offline
from pals.oracle import ReplayOracle


def two_clusters(n=20, seed=0, gap=6.0):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(0, 0.5, size=(n, 2)), rng.normal(gap, 0.5, size=(n, 2))])
    y = np.array([0] * n + [1] * n)
    return X, y


def run(X, y, labeled=(), quiet=True, **cfg):
    pool = [Instance(i, X[i]) for i in range(len(X)) if i not in labeled]
    lab = [Instance(i, X[i], int(y[i])) for i in labeled]
    oracle = ReplayOracle({i: int(v) for i, v in enumerate(y)})
    with warnings.catch_warnings():
        if quiet:
            warnings.simplefilter("ignore", RuntimeWarning)
        res = run_offline(lab, pool, oracle, OfflineConfig(**cfg))
    return res, oracle


class TestConfig:
    def test_per_iteration(self):
        assert OfflineConfig(budget=10, iterations=5).per_iteration == 2

    @pytest.mark.parametrize("budget,iters", [(7, 5), (3, 5), (10, 0)])
    def test_rejected(self, budget, iters):
        with pytest.raises(ConfigurationError):
            OfflineConfig(budget=budget, iterations=iters).validate()

    def test_all_problems_listed(self):
        probs = OfflineConfig(budget=7, iterations=5, smote_k=0, selection="x").problems()
        assert len(probs) == 3


class TestLoop:
    def test_delta_10_k_5(self):
        X, y = two_clusters()
        res, oracle = run(X, y, budget=10, iterations=5)
        assert len(res.queries) == 10 == oracle.n_queries == res.budget.spent
        assert [s["queries"] for s in res.iteration_stats] == [2] * 5
        assert sorted({q.iteration for q in res.queries}) == [1, 2, 3, 4, 5]

    def test_single_iteration_takes_top_entropy(self):
        X, y = two_clusters()
        res, _ = run(X, y, labeled=(0, 20), budget=4, iterations=1, smote=False)
        # replay the same starting model and rank by entropy
        g = build_knn_graph([Instance(i, (X[i] - X.mean(0)) / X.std(0),
                                      int(y[i]) if i in (0, 20) else None)
                             for i in range(len(X))], 7)
        propagate_labels(g)
        H = {nid: -(p * np.log2(np.where(p > 0, p, 1))).sum() for nid, p in infer_unlabeled(g)}
        top = sorted(H, key=lambda i: (-H[i], i))[:4]
        assert [q.instance_id for q in res.queries] == top
        assert all(q.strategy == "entropy" for q in res.queries)

    def test_cold_start_two_clusters(self):
        X, y = two_clusters()
        res, _ = run(X, y, budget=2, iterations=1)
        assert {q.label for q in res.queries} == {0, 1}
        assert res.queries[0].strategy == "farthest"
        Xt, yt = two_clusters(5, seed=9)
        pred = predict_many(res.graph, res.scaler.transform(Xt)).argmax(1)
        np.testing.assert_array_equal(pred, yt)

    def test_uniform_selection(self):
        X, y = two_clusters()
        a, _ = run(X, y, budget=6, iterations=3, selection="uniform", seed=3)
        b, _ = run(X, y, budget=6, iterations=3, selection="uniform", seed=3)
        assert all(q.strategy == "uniform" for q in a.queries)
        assert [q.instance_id for q in a.queries] == [q.instance_id for q in b.queries]

    def test_budget_exceeds_pool(self):
        X, y = two_clusters(3)
        with pytest.raises(ConfigurationError):
            run(X, y, budget=10, iterations=1)

    def test_oracle_failure_aborts_with_log(self):
        X, y = two_clusters()

        class Flaky(ReplayOracle):
            def query(self, instance_id, context=None):
                if self.n_queries == 3:
                    raise OracleError("gone")
                return super().query(instance_id, context)

        oracle = Flaky({i: int(v) for i, v in enumerate(y)})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            with pytest.raises(RunAborted) as info:
                run_offline([], [Instance(i, X[i]) for i in range(len(X))], oracle,
                            OfflineConfig(budget=10, iterations=5))
        assert len(info.value.log) == 3

    def test_synthetic_nodes_negative_and_not_queried(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(60, 2))
        y = (X[:, 0] > 1.0).astype(int)
        res, _ = run(X, y, budget=10, iterations=5)
        syn = [res.graph.ids[i] for i in np.flatnonzero(res.graph.synthetic)]
        assert all(i < 0 for i in syn)
        assert not set(syn) & {q.instance_id for q in res.queries}
        lab = res.graph.labels[res.graph.labels >= 0]
        assert (lab == 0).sum() == (lab == 1).sum()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.sampled_from([(4, 2), (6, 3), (5, 5), (8, 4)]),
           st.sampled_from(["entropy", "uniform"]))
    def test_invariants(self, seed, bk, selection):
        budget, iters = bk
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(30, 3))
        y = (rng.random(30) < 0.3).astype(int)
        res, oracle = run(X, y, budget=budget, iterations=iters, selection=selection, seed=seed)
        ids = [q.instance_id for q in res.queries]
        assert len(ids) == budget == oracle.n_queries == res.budget.spent
        assert len(set(ids)) == budget
        delta = budget // iters
        for j, st_ in enumerate(res.iteration_stats, start=1):
            assert st_["labeled_real"] >= j * delta
        for it in range(1, iters + 1):
            h = [q.entropy for q in res.queries if q.iteration == it]
            assert all(a >= b for a, b in zip(h, h[1:]))


class TestInferUnlabeled:
    def test_all_labeled(self):
        g = build_knn_graph([Instance(i, [float(i)], i % 2) for i in range(4)], 1)
        propagate_labels(g)
        assert infer_unlabeled(g) == []

    def test_eating_neighbourhood(self):
        inst = [Instance(0, [0.0], 1), Instance(1, [0.1], 1), Instance(2, [0.05]),
                Instance(3, [9.0], 0), Instance(4, [9.1], 0)]
        g = build_knn_graph(inst, 2)
        propagate_labels(g)
        (nid, p), = infer_unlabeled(g)
        assert nid == 2 and p[1] == pytest.approx(1.0, abs=1e-6)

    def test_five_node_harmonic(self):
        X = np.array([[0.0, 0.0], [1.0, 0.2], [2.0, -0.1], [3.0, 0.3], [4.0, 0.0]])
        labels = np.array([0, -1, -1, -1, 1])
        g = build_knn_graph([Instance(i, X[i], None if labels[i] < 0 else int(labels[i]))
                             for i in range(5)], 2)
        propagate_labels(g)
        H = harmonic_solution(g.weights.toarray(), labels)
        for nid, p in infer_unlabeled(g):
            np.testing.assert_allclose(p, H[nid], atol=1e-6)

    def test_rbf_kernel_runs(self):
        X, y = two_clusters(10)
        res, _ = run(X, y, budget=4, iterations=2, kernel=KernelConfig("rbf", 7, 1.0))
        assert len(res.queries) == 4
