"""Shared builders and comparisons for the federation tests."""
import numpy as np

from secureboost import data
from secureboost.boosting import BoostingParams, train_centralized
from secureboost.federation import COMPLETELY_SECURE, resolve_tree, vertical_partition


def column_groups(d, n_parties):
    return [list(c) for c in np.array_split(np.arange(d), n_parties)]


def make_parties(profile, n, d, n_parties, seed):
    ds = data.synth(profile, n, d, seed)
    groups = column_groups(d, n_parties)
    return ds, groups, vertical_partition(ds.X, ds.y, groups, ds.feature_names)


def central_twin(ds, groups, params, mode):
    first = groups[0] if mode == COMPLETELY_SECURE else None
    return train_centralized(ds.X, ds.y, params, first_tree_columns=first)


def tree_differences(fed_model, lookups, central, groups, atol=1e-9):
    """Human-readable mismatches between a federated and a centralized model."""
    offsets = {i + 1: g[0] for i, g in enumerate(groups)}
    problems = []
    if len(fed_model.trees) != len(central.trees):
        problems.append(f"{len(fed_model.trees)} vs {len(central.trees)} trees")
    for t, (ft, ct) in enumerate(zip(fed_model.trees, central.trees)):
        feats, thrs = resolve_tree(ft, lookups, offsets)
        if (ft.left, ft.right) != (ct.left, ct.right):
            problems.append(f"tree {t}: structure differs")
        elif feats != ct.feature or thrs != ct.threshold:
            problems.append(f"tree {t}: split features or thresholds differ")
        elif not np.allclose(ft.weight, ct.weight, rtol=0, atol=atol):
            problems.append(f"tree {t}: leaf weights differ")
    return problems


def small_params(**kw):
    base = dict(n_trees=3, max_depth=3, n_bins=8)
    base.update(kw)
    return BoostingParams(**base)
