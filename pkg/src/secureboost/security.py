"""Label leakage analysis for trained models.

Everything here runs at the active party: it needs labels and the leaf each
training row fell into (``leaves``, rows x trees, as returned by
``CentralModel.apply``, ``Federation.apply`` or ``ActiveParty.train_leaves``).
Works for both centralized and federated trees.
"""
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .boosting import sigmoid
from .errors import InputError, ValidationError

ACTIVE_PARTY_ID = 1


def purity_from_weight(weight, base_score=0.5):
    """Invert the large-leaf weight/purity relation w = (a - θ) / (a(a - 1))."""
    a = base_score
    return a - weight * a * (a - 1.0)


def weight_from_purity(theta, base_score=0.5):
    a = base_score
    return (a - theta) / (a * (a - 1.0))


def critical_purity(base_score=0.5):
    """Positive fraction θ* at which residuals separate the classes least."""
    a = base_score
    return a * (1.0 + (1.0 - a) * math.log(a / (1.0 - a)))


@dataclass
class LeafStats:
    leaf: int
    n: int
    positive_fraction: Optional[float]
    purity: Optional[float]
    weight: float
    theta_from_weight: float
    exposed_to: Optional[int] = None


@dataclass
class LeafPurityReport:
    tree: int
    n: int
    leaves: list
    mean_purity: Optional[float]
    exposed_fraction: float = 0.0
    exposed_purity: Optional[float] = None
    weight_check: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _check(leaves, y, tree_index):
    leaves = np.asarray(leaves)
    y = np.asarray(y)
    if leaves.ndim != 2 or leaves.shape[0] != y.shape[0]:
        raise InputError("leaf assignment must be rows x trees and match the labels")
    if not 0 <= tree_index < leaves.shape[1]:
        raise InputError(f"no tree {tree_index}")
    if not np.isin(y, (0, 1)).all():
        raise ValidationError("labels must be 0/1")
    return leaves[:, tree_index], y


def _parent_owner(tree, node):
    owners = getattr(tree, "party_id", None)
    if owners is None:
        return None
    for i in range(tree.n_nodes):
        if tree.left[i] == node or tree.right[i] == node:
            return owners[i]
    return None


def _mean_purity(stats):
    n = sum(s.n for s in stats if s.purity is not None)
    if n == 0:
        return None
    return sum(s.n * s.purity for s in stats if s.purity is not None) / n


def leaf_purity(model, tree_index, leaves, y, base_score=None, min_leaf=50, tolerance=0.1):
    """Per-leaf positive fraction and purity for one tree.

    ``exposed_to`` names the passive party that split the leaf's parent: that
    party saw the leaf's instance space, so guessing its majority class is
    right ``purity`` of the time. ``weight_check`` compares the purity implied
    by each leaf weight with the counted one on leaves of at least ``min_leaf``
    rows.
    """
    col, y = _check(leaves, y, tree_index)
    tree = model.trees[tree_index]
    a = model.base_score if base_score is None else base_score
    stats = []
    for leaf in tree.leaves():
        mask = col == leaf
        n = int(mask.sum())
        theta = float(y[mask].mean()) if n else None
        w = float(tree.weight[leaf])
        owner = _parent_owner(tree, leaf)
        stats.append(LeafStats(
            leaf=leaf, n=n, positive_fraction=theta,
            purity=max(theta, 1.0 - theta) if n else None,
            weight=w, theta_from_weight=purity_from_weight(w, a),
            exposed_to=owner if owner not in (None, ACTIVE_PARTY_ID) else None,
        ))
    exposed = [s for s in stats if s.exposed_to is not None]
    checked = [s for s in stats if s.n >= min_leaf]
    errors = [abs(s.theta_from_weight - s.positive_fraction) for s in checked]
    return LeafPurityReport(
        tree=tree_index, n=int(col.shape[0]), leaves=stats,
        mean_purity=_mean_purity(stats),
        exposed_fraction=sum(s.n for s in exposed) / max(1, col.shape[0]),
        exposed_purity=_mean_purity(exposed),
        weight_check={"min_leaf": min_leaf, "tolerance": tolerance, "leaves": len(checked),
                      "max_error": max(errors, default=0.0),
                      "ok": all(e <= tolerance for e in errors)},
    )


def purity_trend(model, leaves, y):
    """Mean leaf purity of every tree, in order."""
    leaves = np.asarray(leaves)
    return [leaf_purity(model, t, leaves, y).mean_purity for t in range(leaves.shape[1])]


@dataclass
class ResidualMaskStats:
    defined: bool
    base_score: float
    critical_purity: float
    mu_n: Optional[float] = None
    mu_p: Optional[float] = None
    separation: Optional[float] = None
    leafwise_separation: Optional[float] = None
    first_tree_purity: Optional[float] = None
    reason: str = ""

    def to_dict(self):
        return asdict(self)


def residual_mask_check(model, leaves, y, tree_index=0):
    """How well the gradients after tree ``tree_index`` hide the labels.

    ``mu_n``/``mu_p`` are the mean |g| of negatives and positives entering the
    next tree (|g| = p for negatives, 1 - p for positives). ``separation`` is
    their exact difference; ``leafwise_separation`` is the balanced-class
    approximation (1/N_n) Σ_j n_j |p_j - θ_j| taken leaf by leaf. Both are
    reported because the approximation is only good for many rows per leaf.
    """
    col, y = _check(leaves, y, tree_index)
    a = model.base_score
    stats = ResidualMaskStats(False, a, critical_purity(a))
    if y.min() == y.max():
        stats.reason = "single-class labels"
        return stats
    raw = np.full(y.shape[0], model.base_raw)
    leaves = np.asarray(leaves)
    for t in range(tree_index + 1):
        raw = raw + model.learning_rate * np.asarray(model.trees[t].weight)[leaves[:, t]]
    p = sigmoid(raw)
    neg, pos = y == 0, y == 1
    stats.mu_n = float(p[neg].mean())
    stats.mu_p = float((1.0 - p[pos]).mean())
    stats.separation = abs(stats.mu_n - stats.mu_p)
    total = 0.0
    for leaf in np.unique(col):
        mask = col == leaf
        total += mask.sum() * abs(float(p[mask][0]) - float(y[mask].mean()))
    stats.leafwise_separation = float(total / neg.sum())
    stats.first_tree_purity = leaf_purity(model, tree_index, leaves, y).mean_purity
    stats.defined = True
    return stats


def analysis_report(model, leaves, y, min_leaf=50):
    """Everything above as one JSON-ready document."""
    leaves = np.asarray(leaves)
    reports = [leaf_purity(model, t, leaves, y, min_leaf=min_leaf) for t in range(leaves.shape[1])]
    doc = {
        "format": "secureboost-analysis",
        "version": 1,
        "mode": getattr(model, "mode", "centralized"),
        "purity_trend": [r.mean_purity for r in reports],
        "trees": [r.to_dict() for r in reports],
    }
    if leaves.shape[1]:
        doc["residual_mask"] = residual_mask_check(model, leaves, y).to_dict()
    return doc
