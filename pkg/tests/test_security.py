import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq
from scipy.stats import spearmanr

from helpers import make_parties, small_params
from secureboost import data
from secureboost.boosting import BoostingParams, sigmoid, train_centralized
from secureboost.federation import Federation
from secureboost.security import (analysis_report, critical_purity, leaf_purity, purity_from_weight,
                                  purity_trend, residual_mask_check, weight_from_purity)


def test_pure_leaf_weight_maps_to_full_purity():
    assert purity_from_weight(2.0, 0.5) == 1.0
    assert purity_from_weight(-2.0, 0.5) == 0.0
    assert critical_purity(0.5) == 0.5


@given(st.floats(0.01, 0.99), st.floats(0.0, 1.0))
def test_weight_purity_inverse(a, theta):
    assert purity_from_weight(weight_from_purity(theta, a), a) == pytest.approx(theta, abs=1e-9)


@given(st.floats(0.01, 0.99))
def test_critical_purity_solves_prediction_equals_base_score(a):
    # root of S(w(θ)) = a found numerically, independent of the closed form
    root = brentq(lambda t: sigmoid(weight_from_purity(t, a)) - a, -20.0, 20.0, xtol=1e-13)
    assert critical_purity(a) == pytest.approx(root, abs=1e-9)


@pytest.fixture(scope="module")
def fitted():
    ds = data.synth("credit2", 3000, 10, seed=0)
    model = train_centralized(ds.X, ds.y, BoostingParams(n_trees=5))
    return ds, model, model.apply(ds.X)


def test_leaf_weights_imply_counted_purity(fitted):
    ds, model, leaves = fitted
    report = leaf_purity(model, 0, leaves, ds.y, min_leaf=50, tolerance=0.05)
    assert report.weight_check["leaves"] > 0 and report.weight_check["ok"]
    for s in report.leaves:
        if s.n:
            assert s.positive_fraction == ds.y[leaves[:, 0] == s.leaf].mean()


def test_purity_is_label_symmetric(fitted):
    ds, model, leaves = fitted
    for t in range(3):
        a = leaf_purity(model, t, leaves, ds.y).mean_purity
        b = leaf_purity(model, t, leaves, 1 - ds.y).mean_purity
        assert a == pytest.approx(b)


def test_purity_of_constant_and_random_labels(fitted):
    ds, model, leaves = fitted
    assert leaf_purity(model, 0, leaves, np.ones_like(ds.y)).mean_purity == 1.0
    coin = np.random.default_rng(0).integers(0, 2, ds.n_rows)
    assert leaf_purity(model, 0, leaves, coin).mean_purity == pytest.approx(0.5, abs=0.05)


def test_mean_purity_is_at_least_the_majority_rate(fitted):
    ds, model, leaves = fitted
    floor = max(ds.y.mean(), 1 - ds.y.mean())
    assert all(p >= floor - 1e-12 for p in purity_trend(model, leaves, ds.y))


def test_single_class_labels_leave_separation_undefined(fitted):
    ds, model, leaves = fitted
    stats = residual_mask_check(model, leaves, np.zeros_like(ds.y))
    assert not stats.defined and stats.reason == "single-class labels"


def test_separation_matches_direct_computation(fitted):
    ds, model, leaves = fitted
    stats = residual_mask_check(model, leaves, ds.y)
    p = next(model.staged_predict_proba(ds.X))
    y = ds.y
    assert stats.mu_n == pytest.approx(p[y == 0].mean())
    assert stats.mu_p == pytest.approx((1 - p[y == 1]).mean())
    leafwise = sum((leaves[:, 0] == j).sum() * abs(p[leaves[:, 0] == j][0] - y[leaves[:, 0] == j].mean())
                   for j in np.unique(leaves[:, 0])) / (y == 0).sum()
    assert stats.leafwise_separation == pytest.approx(leafwise)


@pytest.mark.parametrize("profile", ["balanced", "credit2"])
def test_separation_grows_with_first_tree_purity(profile):
    ds = data.synth(profile, 3000, 10, seed=0)
    purity, separation = [], []
    for depth in (1, 2, 3, 4, 6, 8):
        model = train_centralized(ds.X, ds.y, BoostingParams(n_trees=1, max_depth=depth))
        stats = residual_mask_check(model, model.apply(ds.X), ds.y)
        purity.append(stats.first_tree_purity)
        separation.append(stats.leafwise_separation)
    assert spearmanr(purity, separation).statistic >= 0.9


def test_federated_analysis_marks_exposed_leaves():
    _, _, parties = make_parties("credit2", 300, 6, 2, seed=3)
    with Federation(parties, small_params(n_trees=2), key_bits=256) as fed:
        model = fed.fit()
        leaves = fed.active.train_leaves
    doc = analysis_report(model, leaves, parties[0].y, min_leaf=20)
    assert doc["format"] == "secureboost-analysis" and doc["mode"] == "standard"
    assert len(doc["trees"]) == 2 and doc["residual_mask"]["defined"]
    for t, tree in enumerate(model.trees):
        for s in doc["trees"][t]["leaves"]:
            parent = tree.parent(s["leaf"])
            expected = None if parent is None or tree.party_id[parent] == 1 else tree.party_id[parent]
            assert s["exposed_to"] == expected
