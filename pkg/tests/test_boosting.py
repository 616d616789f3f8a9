from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from secureboost import data
from secureboost.boosting import (BoostingParams, CentralModel, CentralTree, aggregate_histogram,
                                  best_split_in_histogram, bin_column, bin_matrix, leaf_weight,
                                  logistic_grad, logistic_grads, predict, propose_thresholds,
                                  split_gain, train_centralized)
from secureboost.errors import ConfigurationError, DomainError, InputError
from secureboost.metrics import log_loss


@pytest.mark.parametrize("y,p,g,h", [(1, 0.5, -0.5, 0.25), (0, 0.5, 0.5, 0.25),
                                     (1, 0.9, -0.1, 0.09)])
def test_logistic_grad(y, p, g, h):
    pair = logistic_grad(y, p)
    assert pair.g == pytest.approx(g) and pair.h == pytest.approx(h)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_logistic_grad_domain(p):
    with pytest.raises(DomainError):
        logistic_grad(1, p)


def test_quantized_grads_lie_on_grid():
    g, h = logistic_grads(np.array([0, 1, 1]), np.array([-30.0, 0.3, 40.0]), 40)
    scale = 2.0 ** 40
    assert np.array_equal(g * scale, np.round(g * scale))
    assert (h > 0).all()


def test_thresholds_of_1_to_100():
    assert propose_thresholds(np.arange(1, 101), 4).tolist() == [25, 50, 75, 100]


def test_thresholds_degenerate_columns():
    assert propose_thresholds([7, 7, 7], 8).tolist() == [7]
    assert propose_thresholds([0, 1] * 20, 32).tolist() == [0, 1]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=1, max_size=80), st.integers(1, 40))
def test_thresholds_match_order_statistic_oracle(values, l):
    column = np.array(values, dtype=float)
    expected = np.unique(np.quantile(column, np.arange(1, l + 1) / l, method="inverted_cdf"))
    got = propose_thresholds(column, l)
    assert got.tolist() == expected.tolist()
    assert got[-1] == column.max()
    assert (np.diff(got) > 0).all()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=60),
       st.integers(1, 16))
def test_bucket_membership_rule(values, l):
    column = np.array(values)
    thr = propose_thresholds(column, l)
    for x, v in zip(column, bin_column(column, thr)):
        assert x <= thr[v]
        assert v == 0 or thr[v - 1] < x


def test_value_above_top_threshold_is_rejected():
    with pytest.raises(DomainError):
        bin_column(np.array([1.0, 5.0]), np.array([2.0, 3.0]))


def _direct_histogram(X, thresholds, g, h, rows):
    """Bucket sums by evaluating the membership predicate for every bucket."""
    G, H = [], []
    for k, thr in enumerate(thresholds):
        lo = np.concatenate([[-np.inf], thr[:-1]])
        Gk = [sum(g[i] for i in rows if lo[v] < X[i, k] <= thr[v]) for v in range(len(thr))]
        Hk = [sum(h[i] for i in rows if lo[v] < X[i, k] <= thr[v]) for v in range(len(thr))]
        G.append(Gk)
        H.append(Hk)
    return G, H


def test_histogram_singleton():
    X = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    thr = [propose_thresholds(X[:, k], 2) for k in range(2)]
    hist = aggregate_histogram([1], bin_matrix(X, thr), np.array([0.1, -0.7, 0.2]),
                               np.array([0.2, 0.3, 0.1]), [len(t) for t in thr])
    for k in range(2):
        assert np.count_nonzero(hist.G[k]) == 1
        assert hist.G[k].sum() == -0.7 and hist.H[k].sum() == 0.3


def test_histogram_single_bucket():
    X = np.zeros((5, 1))
    thr = [propose_thresholds(X[:, 0], 4)]
    g = np.array([0.5, -0.5, 0.25, 0.125, -1.0])
    hist = aggregate_histogram(range(5), bin_matrix(X, thr), g, np.ones(5) / 4, [1])
    assert hist.G[0].tolist() == [g.sum()]


def test_histogram_matches_direct_summation(rng):
    X = rng.normal(size=(50, 3))
    g, h = rng.uniform(-1, 1, 50), rng.uniform(0, 0.25, 50)
    thr = [propose_thresholds(X[:, k], 4) for k in range(3)]
    rows = np.flatnonzero(rng.random(50) < 0.7)
    hist = aggregate_histogram(rows, bin_matrix(X, thr), g, h, [len(t) for t in thr])
    G, H = _direct_histogram(X, thr, g, h, rows)
    for k in range(3):
        np.testing.assert_allclose(hist.G[k], G[k], atol=1e-12)
        np.testing.assert_allclose(hist.H[k], H[k], atol=1e-12)
        assert hist.G[k].sum() == pytest.approx(g[rows].sum())


def test_generic_path_matches_float_path(rng):
    # Fractions exercise the same code path ciphertexts take, with exact sums
    X = rng.normal(size=(40, 2))
    g, h = logistic_grads(rng.integers(0, 2, 40), rng.normal(size=40), 40)
    thr = [propose_thresholds(X[:, k], 8) for k in range(2)]
    binned, bins = bin_matrix(X, thr), [len(t) for t in thr]
    rows = np.arange(0, 40, 3)
    fast = aggregate_histogram(rows, binned, g, h, bins)
    exact = aggregate_histogram(rows, binned, [Fraction(x) for x in g], [Fraction(x) for x in h],
                                bins, zero=lambda: Fraction(0))
    for k in range(2):
        assert [Fraction(x) for x in fast.G[k]] == exact.G[k]
        assert [Fraction(x) for x in fast.H[k]] == exact.H[k]


def test_split_gain_examples():
    assert split_gain(3.0, 2.0, 3.0, 2.0, 1.0, 0.7) == pytest.approx(-0.7)
    assert split_gain(1.0, 1.0, 0.0, 2.0, 1.0, 0.0) == pytest.approx(0.5)


def test_leaf_weight_examples():
    assert leaf_weight(0.0, 5.0, 1.0) == 0.0
    assert leaf_weight(-3.0, 2.0, 1.0) == 1.0


@pytest.mark.parametrize("theta", [0.1, 0.3, 0.5, 0.8, 1.0])
def test_leaf_weight_of_large_leaf_follows_purity(theta):
    a, n = 0.5, 100_000
    y = np.zeros(n)
    y[: int(theta * n)] = 1
    g, h = a - y, np.full(n, a * (1 - a))
    w = leaf_weight(g.sum(), h.sum(), 1e-9)
    assert w == pytest.approx((a - theta) / (a * (a - 1)), abs=1e-6)


def _brute_force_split(X, g, h, params):
    """Every (feature, distinct value) partition, scored directly; first maximum."""
    best = None
    G, Hs = g.sum(), h.sum()
    for k in range(X.shape[1]):
        for t in np.unique(X[:, k]):
            left = X[:, k] <= t
            if not left.any() or left.all():
                continue
            gain = split_gain(g[left].sum(), h[left].sum(), G, Hs, params.reg_lambda, params.gamma)
            if best is None or gain > best[2] + 1e-12:
                best = (k, t, gain)
    return best


def test_best_split_matches_brute_force(rng):
    params = BoostingParams(n_bins=64)
    for _ in range(20):
        X = rng.integers(0, 12, size=(20, 2)).astype(float)
        g, h = logistic_grads(rng.integers(0, 2, 20), rng.normal(size=20), 40)
        thr = [propose_thresholds(X[:, k], params.n_bins) for k in range(2)]
        hist = aggregate_histogram(range(20), bin_matrix(X, thr), g, h, [len(t) for t in thr])
        found = best_split_in_histogram(hist, g.sum(), h.sum(), params)
        oracle = _brute_force_split(X, g, h, params)
        assert (found.feature, thr[found.feature][found.threshold_id]) == oracle[:2]
        assert found.gain == pytest.approx(oracle[2])


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 200), st.integers(1, 4), st.integers(1, 16), st.integers(0, 10**6))
def test_histogram_split_equals_bucket_boundary_enumeration(n, d, l, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d)).round(1)
    g, h = logistic_grads(rng.integers(0, 2, n), rng.normal(size=n), 40)
    params = BoostingParams(n_bins=l)
    thr = [propose_thresholds(X[:, k], l) for k in range(d)]
    hist = aggregate_histogram(range(n), bin_matrix(X, thr), g, h, [len(t) for t in thr])
    found = best_split_in_histogram(hist, g.sum(), h.sum(), params)
    best = None
    for k in range(d):
        for v, t in enumerate(thr[k]):
            left = X[:, k] <= t
            if left.all():
                continue
            gain = split_gain(g[left].sum(), h[left].sum(), g.sum(), h.sum(), 1.0, 0.0)
            if best is None or gain > best[2]:
                best = (k, v, gain)
    if best is None:
        assert found is None
    else:
        assert (found.feature, found.threshold_id) == best[:2]


def test_gain_argmax_matches_unscaled_score(rng):
    g, h = rng.uniform(-1, 1, 30), rng.uniform(0.01, 0.25, 30)
    g_l, h_l = np.cumsum(g)[:-1], np.cumsum(h)[:-1]
    G, H = g.sum(), h.sum()
    gains = split_gain(g_l, h_l, G, H, 1.0, 0.0)
    score = g_l ** 2 / (h_l + 1.0) + (G - g_l) ** 2 / (H - h_l + 1.0) - G ** 2 / (H + 1.0)
    assert np.argmax(gains) == np.argmax(score)


def test_params_validation():
    for bad in (dict(n_trees=0), dict(max_depth=0), dict(learning_rate=0.0),
                dict(learning_rate=1.5), dict(subsample=0.0), dict(reg_lambda=-1.0),
                dict(gamma=-0.1), dict(base_score=1.0), dict(n_bins=0)):
        with pytest.raises(ConfigurationError):
            BoostingParams(**bad).validate()


def test_training_loss_decreases_on_separable_data(rng):
    X = rng.normal(size=(100, 2))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    model = train_centralized(X, y, BoostingParams(n_trees=5, max_depth=3))
    losses = [log_loss(y, p) for p in model.staged_predict_proba(X)]
    assert all(b < a for a, b in zip([np.log(2)] + losses, losses))


@pytest.mark.parametrize("profile", ["credit1", "credit2", "balanced", "random"])
def test_training_loss_never_increases(profile):
    ds = data.synth(profile, 400, 6, seed=3)
    model = train_centralized(ds.X, ds.y, BoostingParams(n_trees=15))
    losses = [log_loss(ds.y, p) for p in model.staged_predict_proba(ds.X)]
    assert all(b <= a + 1e-12 for a, b in zip([np.log(2)] + losses, losses))


def test_single_instance_gives_single_leaves():
    model = train_centralized(np.array([[1.0, 2.0]]), np.array([1]), BoostingParams(n_trees=3))
    for tree in model.trees:
        assert tree.n_nodes == 1
    # first tree: g = -0.5, h = 0.25 (quantized), lambda = 1
    assert model.trees[0].weight[0] == pytest.approx(0.5 / 1.25)


def test_single_class_labels_give_constant_leaves(rng):
    X = rng.normal(size=(50, 3))
    model = train_centralized(X, np.zeros(50, dtype=int), BoostingParams(n_trees=4))
    for tree in model.trees:
        assert tree.n_nodes == 1 and tree.weight[0] < 0


def test_gamma_prunes_weak_splits(rng):
    X = rng.normal(size=(60, 2))
    y = rng.integers(0, 2, 60)
    model = train_centralized(X, y, BoostingParams(n_trees=2, gamma=50.0))
    assert all(t.n_nodes == 1 for t in model.trees)


def test_empty_model_and_zero_leaf_predict_half():
    assert predict(CentralModel([], 0.3, 0.5, 2), [1.0, 2.0]) == 0.5
    leaf = CentralTree()
    leaf.add_node()
    assert predict(CentralModel([leaf], 0.3, 0.5, 2), [1.0, 2.0]) == 0.5


def test_predict_rejects_missing_features(rng):
    X = rng.normal(size=(30, 3))
    model = train_centralized(X, (X[:, 2] > 0).astype(int), BoostingParams(n_trees=2))
    with pytest.raises(InputError):
        model.predict_proba(X[:, :2])


def _walk(tree, x):
    node = 0
    while tree.left[node] >= 0:
        node = tree.left[node] if x[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
    return tree.weight[node]


def test_predictions_match_manual_traversal(rng):
    ds = data.synth("balanced", 300, 5, seed=9)
    model = train_centralized(ds.X, ds.y, BoostingParams(n_trees=6))
    for i in rng.choice(300, 10, replace=False):
        raw = 0.0 + sum(0.3 * _walk(t, ds.X[i]) for t in model.trees)
        assert predict(model, ds.X[i]) == pytest.approx(1 / (1 + np.exp(-raw)), abs=1e-12)


def test_first_tree_restricted_to_given_columns():
    ds = data.synth("credit2", 400, 6, seed=2)
    model = train_centralized(ds.X, ds.y, BoostingParams(n_trees=3), first_tree_columns=[3, 4, 5])
    first = [f for f in model.trees[0].feature if f >= 0]
    assert first and all(f in (3, 4, 5) for f in first)


def test_training_is_deterministic():
    ds = data.synth("credit1", 300, 6, seed=4)
    a = train_centralized(ds.X, ds.y, BoostingParams(n_trees=4, seed=11))
    b = train_centralized(ds.X, ds.y, BoostingParams(n_trees=4, seed=11))
    assert a == b
