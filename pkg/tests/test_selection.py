import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import binary_entropy_bits
from pals.errors import UsageError
from pals.selection import (
    InformativenessScore,
    QueryBudget,
    entropies,
    entropy,
    farthest_point_select,
    minority_neighbors,
    select_top,
    smote_balance,
    uniform_select,
)

# -(0.9 log2 0.9 + 0.1 log2 0.1), evaluated at 30 digits
H_09 = 0.468995593589281221


class TestEntropy:
    def test_fixed_points(self):
        assert entropy([0.5, 0.5]) == 1.0
        assert entropy([1.0, 0.0]) == 0.0
        assert entropy([0.9, 0.1]) == pytest.approx(H_09, abs=1e-15)

    @pytest.mark.parametrize("p", [[0.5, 0.6], [-0.1, 1.1], [1.0], [np.nan, 1.0]])
    def test_invalid(self, p):
        with pytest.raises(UsageError):
            entropy(p)

    @settings(max_examples=200)
    @given(st.floats(0, 1))
    def test_symmetric_bounded_max_at_half(self, p):
        h = entropy([p, 1 - p])
        assert h == pytest.approx(entropy([1 - p, p]), abs=1e-12)
        assert 0 <= h <= 1
        assert h == pytest.approx(binary_entropy_bits([p, 1 - p]), abs=1e-12)
        if abs(p - 0.5) > 1e-6:
            assert h < 1.0

    def test_vectorized_matches_scalar(self):
        P = np.array([[0.5, 0.5], [1.0, 0.0], [0.9, 0.1], [0.3, 0.7]])
        np.testing.assert_allclose(entropies(P), [entropy(p) for p in P])


class TestSelectTop:
    def test_examples(self):
        scores = [InformativenessScore("a", 0.9), InformativenessScore("b", 0.7),
                  InformativenessScore("c", 0.9)]
        assert select_top(scores, 0) == []
        assert set(select_top(scores, 2)) == {"a", "c"}
        same = [InformativenessScore(i, 0.3) for i in (5, 2, 9)]
        assert select_top(same, 1) == [2]
        assert len(select_top(scores, 10)) == 3

    @settings(max_examples=200)
    @given(st.lists(st.floats(0, 1), max_size=40), st.integers(0, 45))
    def test_selected_dominate(self, values, delta):
        scores = [InformativenessScore(i, v) for i, v in enumerate(values)]
        picked = set(select_top(scores, delta))
        assert len(picked) == min(delta, len(values))
        lo = min((values[i] for i in picked), default=np.inf)
        assert all(values[i] <= lo for i in range(len(values)) if i not in picked)


class TestUniform:
    def test_full_draw_is_permutation(self):
        assert sorted(uniform_select(range(10), 10, 0)) == list(range(10))

    def test_seeded(self):
        assert uniform_select(range(100), 5, 42) == uniform_select(range(100), 5, 42)

    def test_too_many(self):
        with pytest.raises(UsageError):
            uniform_select([1, 2], 3, 0)

    def test_frequencies(self):
        rng = np.random.default_rng(0)
        draws = [uniform_select(["a", "b", "c"], 1, rng)[0] for _ in range(10000)]
        for c in "abc":
            assert abs(draws.count(c) / 10000 - 1 / 3) <= 0.02


class TestBudget:
    def test_spend_refund(self):
        b = QueryBudget(2)
        b.spend()
        b.spend()
        assert b.remaining == 0
        with pytest.raises(UsageError):
            b.spend()
        b.refund()
        assert b.remaining == 1

    @settings(max_examples=200)
    @given(st.integers(0, 10), st.lists(st.booleans(), max_size=40))
    def test_never_overspent(self, total, ops):
        b = QueryBudget(total)
        for spend in ops:
            try:
                b.spend() if spend else b.refund()
            except UsageError:
                pass
            assert 0 <= b.spent <= b.total


class TestFarthest:
    def test_picks_extremes(self):
        X = np.array([[0.0], [1.0], [2.0], [10.0]])
        assert farthest_point_select(X, 2) == [3, 0]

    def test_anchors(self):
        X = np.array([[0.0], [1.0], [9.0]])
        assert farthest_point_select(X, 1, anchors=np.array([[8.0]])) == [0]


class TestSmote:
    def test_balanced_unchanged(self):
        X = np.arange(8.0).reshape(4, 2)
        res = smote_balance(X, [0, 1, 0, 1], 5, 0)
        np.testing.assert_array_equal(res.features, X)
        assert res.parents == []

    def test_diagonal_segment(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 0.0], [6.0, 0.0], [7.0, 0.0], [8.0, 0.0]])
        res = smote_balance(X, [1, 1, 0, 0, 0, 0], 5, 3)
        synth = res.features[res.synthetic_mask]
        assert len(synth) == 2
        np.testing.assert_allclose(synth[:, 0], synth[:, 1])
        assert np.all((synth[:, 0] >= 0) & (synth[:, 0] <= 1))

    def test_three_vs_nine(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(12, 3))
        y = np.array([1, 1, 1] + [0] * 9)
        res = smote_balance(X, y, 5, 9)
        assert np.bincount(res.labels).tolist() == [9, 9]
        assert res.synthetic_mask.sum() == 6
        members = np.flatnonzero(y == 1)
        # brute-force neighbour lists: with 3 minority points each has the other two
        for j, (src, dst, g) in enumerate(res.parents):
            assert src in members and dst in members and src != dst
            np.testing.assert_allclose(res.features[12 + j], X[src] + g * (X[dst] - X[src]))

    def test_single_minority_warns(self):
        with pytest.warns(RuntimeWarning):
            res = smote_balance(np.zeros((4, 2)), [1, 0, 0, 0], 5, 0)
        assert res.warning and len(res.labels) == 4

    def test_neighbors_tie_lower_index(self):
        Xm = np.array([[0.0], [1.0], [-1.0]])
        assert minority_neighbors(Xm, 1)[0].tolist() == [1]

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10**6))
    def test_convex_combination(self, seed):
        rng = np.random.default_rng(seed)
        n_min = int(rng.integers(2, 8))
        n_maj = int(rng.integers(n_min, 30))
        X = rng.normal(size=(n_min + n_maj, 2))
        y = np.array([1] * n_min + [0] * n_maj)
        k = int(rng.integers(1, 6))
        res = smote_balance(X, y, k, seed)
        counts = np.bincount(res.labels, minlength=2)
        assert counts[0] == counts[1]
        nn = minority_neighbors(X[:n_min], min(k, n_min - 1))
        for j, (src, dst, g) in enumerate(res.parents):
            assert 0 <= g <= 1 and dst in nn[src]
            assert np.abs(res.features[len(y) + j] - (X[src] + g * (X[dst] - X[src]))).max() \
                <= 1e-9
