"""Plaintext gradient boosting for binary classification.

This module holds the arithmetic shared by both trainers (gradients, quantile
bins, histogram aggregation, split scoring, leaf weights) and a centralized
trainer that sees the joined feature matrix. The federated trainer reuses the
same scoring code, which is what makes the two produce identical trees.

Gradients are snapped to a 2**-scale_bits grid before use. Sums of such values
are exact in float64 (up to ~8000 instances at scale 40), so a histogram summed
in plaintext and one summed under Paillier and decoded agree bit for bit.
"""
from dataclasses import dataclass, field, asdict
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, InputError


@dataclass(frozen=True)
class BoostingParams:
    n_trees: int = 25
    max_depth: int = 3
    learning_rate: float = 0.3
    reg_lambda: float = 1.0
    gamma: float = 0.0
    subsample: float = 0.8
    n_bins: int = 32
    base_score: float = 0.5
    min_child: int = 1
    scale_bits: Optional[int] = 40
    seed: int = 0

    def validate(self):
        if self.n_trees < 1:
            raise ConfigurationError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ConfigurationError("max_depth must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ConfigurationError("learning_rate must lie in (0, 1]")
        if self.reg_lambda < 0 or self.gamma < 0:
            raise ConfigurationError("reg_lambda and gamma must be non-negative")
        if not 0 < self.subsample <= 1:
            raise ConfigurationError("subsample must lie in (0, 1]")
        if self.n_bins < 1:
            raise ConfigurationError("n_bins must be >= 1")
        if not 0 < self.base_score < 1:
            raise ConfigurationError("base_score must lie in (0, 1)")
        if self.min_child < 1:
            raise ConfigurationError("min_child must be >= 1")
        return self

    def to_dict(self):
        return asdict(self)


class GradPair(NamedTuple):
    g: float
    h: float


class HistogramPair(NamedTuple):
    """Per-feature bucket sums. ``G[k][v]`` sums g over bucket v of feature k."""
    G: list
    H: list


class SplitInfo(NamedTuple):
    party_id: int
    feature: int
    threshold_id: int
    gain: float


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    return float(np.log(p / (1.0 - p)))


def logistic_grad(y, p):
    """First and second derivative of the log loss at probability ``p``."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    return GradPair(p - y, p * (1.0 - p))


def quantize_grads(g, h, scale_bits):
    if scale_bits is None:
        return g, h
    scale = float(1 << scale_bits)
    g = np.round(g * scale) / scale
    # h of a non-empty set must stay > 0; the split finder relies on h == 0 <=> empty
    h = np.maximum(np.round(h * scale), 1.0) / scale
    return g, h


def logistic_grads(y, raw, scale_bits=None):
    """Vectorized g, h for raw scores ``raw``, optionally snapped to the codec grid."""
    p = sigmoid(raw)
    y = np.asarray(y, dtype=float)
    return quantize_grads(p - y, p * (1.0 - p), scale_bits)


def propose_thresholds(column, n_bins):
    """Candidate split values at the ``n_bins`` equally spaced order statistics.

    Value ``j`` is the ceil(j*m/l)-th smallest entry, so the last candidate is
    the column maximum. Repeated values collapse.
    """
    col = np.sort(np.asarray(column, dtype=float))
    m = len(col)
    if m == 0:
        raise DomainError("cannot propose thresholds for an empty column")
    if n_bins < 1:
        raise DomainError("n_bins must be >= 1")
    j = np.arange(1, n_bins + 1)
    idx = (j * m + n_bins - 1) // n_bins - 1
    return np.unique(col[idx])


def bin_column(column, thresholds):
    """Bucket index v with thresholds[v-1] < x <= thresholds[v]."""
    idx = np.searchsorted(thresholds, column, side="left")
    if np.any(idx >= len(thresholds)):
        raise DomainError("value above the top threshold; bins do not cover the column")
    return idx.astype(np.int64)


def bin_matrix(X, thresholds):
    X = np.asarray(X, dtype=float)
    if X.shape[1] == 0:
        return np.zeros((X.shape[0], 0), dtype=np.int64)
    return np.column_stack([bin_column(X[:, k], thresholds[k]) for k in range(X.shape[1])])


def aggregate_histogram(instances, binned, g, h, n_bins, zero=None):
    """Bucket sums of g and h over ``instances`` for every feature.

    ``g`` and ``h`` may be float arrays or sequences of any type supporting
    ``+`` (ciphertexts). ``zero`` is a callable producing the additive identity
    for empty buckets; float arrays default to 0.0.
    """
    instances = np.asarray(instances, dtype=np.int64)
    G, H = [], []
    if isinstance(g, np.ndarray) and g.dtype.kind == "f":
        for k, l_k in enumerate(n_bins):
            b = binned[instances, k]
            G.append(np.bincount(b, weights=g[instances], minlength=l_k))
            H.append(np.bincount(b, weights=h[instances], minlength=l_k))
        return HistogramPair(G, H)

    rows = instances.tolist()
    g_rows = [g[i] for i in rows]
    h_rows = [h[i] for i in rows]
    for k, l_k in enumerate(n_bins):
        Gk = [None] * l_k
        Hk = [None] * l_k
        for b, gi, hi in zip(binned[instances, k].tolist(), g_rows, h_rows):
            if Gk[b] is None:
                Gk[b], Hk[b] = gi, hi
            else:
                Gk[b] = Gk[b] + gi
                Hk[b] = Hk[b] + hi
        for v in range(l_k):
            if Gk[v] is None:
                Gk[v] = zero() if zero is not None else 0.0
                Hk[v] = zero() if zero is not None else 0.0
        G.append(Gk)
        H.append(Hk)
    return HistogramPair(G, H)


def split_gain(g_l, h_l, g_total, h_total, reg_lambda, gamma):
    """Loss reduction of splitting a node into (left, rest); works elementwise."""
    g_r = g_total - g_l
    h_r = h_total - h_l
    return 0.5 * (g_l * g_l / (h_l + reg_lambda)
                  + g_r * g_r / (h_r + reg_lambda)
                  - g_total * g_total / (h_total + reg_lambda)) - gamma


def leaf_weight(g_sum, h_sum, reg_lambda):
    return -g_sum / (h_sum + reg_lambda)


def best_split_in_histogram(hist, g_total, h_total, params, party_id=1, features=None):
    """Scan one party's decoded histograms in feature/threshold order.

    Prefix sums over buckets give (g_l, h_l) for every threshold. A candidate is
    valid only when both children carry hessian mass. Returns the first
    maximum as a :class:`SplitInfo`, or None.
    """
    best = None
    ks = range(len(hist.G)) if features is None else features
    for k in ks:
        g_l = np.cumsum(np.asarray(hist.G[k], dtype=float))
        h_l = np.cumsum(np.asarray(hist.H[k], dtype=float))
        gains = split_gain(g_l, h_l, g_total, h_total, params.reg_lambda, params.gamma)
        valid = (h_l > 0) & (h_total - h_l > 0)
        if not valid.any():
            continue
        gains = np.where(valid, gains, -np.inf)
        v = int(np.argmax(gains))
        if best is None or gains[v] > best.gain:
            best = SplitInfo(party_id, k, v, float(gains[v]))
    return best


def subsample_rows(rng, n, fraction):
    """Boolean mask of the rows used to fit one tree."""
    if fraction >= 1.0:
        return np.ones(n, dtype=bool)
    m = max(1, int(round(fraction * n)))
    mask = np.zeros(n, dtype=bool)
    mask[rng.permutation(n)[:m]] = True
    return mask


@dataclass
class CentralTree:
    """Array-backed binary tree; node 0 is the root, nodes are in BFS order."""
    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    weight: list = field(default_factory=list)

    def add_node(self):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.weight.append(0.0)
        return len(self.feature) - 1

    @property
    def n_nodes(self):
        return len(self.feature)

    def is_leaf(self, node):
        return self.left[node] < 0

    def leaves(self):
        return [i for i in range(self.n_nodes) if self.is_leaf(i)]

    def apply(self, X):
        """Leaf node id reached by every row of ``X``."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.ones(X.shape[0], dtype=bool)
        while active.any():
            for nid in np.unique(node[active]):
                if self.is_leaf(nid):
                    active[node == nid] = False
                    continue
                rows = node == nid
                go_left = X[rows, self.feature[nid]] <= self.threshold[nid]
                node[rows] = np.where(go_left, self.left[nid], self.right[nid])
        return node

    def predict(self, X):
        return np.asarray(self.weight, dtype=float)[self.apply(X)]


@dataclass
class CentralModel:
    trees: list
    learning_rate: float
    base_score: float
    n_features: int

    @property
    def base_raw(self):
        return logit(self.base_score)

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] < self.n_features:
            raise InputError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def decision_function(self, X):
        X = self._check(X)
        raw = np.full(X.shape[0], self.base_raw)
        for tree in self.trees:
            raw += self.learning_rate * tree.predict(X)
        return raw

    def predict_proba(self, X):
        return sigmoid(self.decision_function(X))

    def staged_predict_proba(self, X):
        X = self._check(X)
        raw = np.full(X.shape[0], self.base_raw)
        for tree in self.trees:
            raw = raw + self.learning_rate * tree.predict(X)
            yield sigmoid(raw)

    def apply(self, X):
        """(n_rows, n_trees) matrix of leaf ids."""
        X = self._check(X)
        return np.column_stack([t.apply(X) for t in self.trees]) if self.trees \
            else np.zeros((X.shape[0], 0), dtype=np.int64)


def predict(model, x):
    """Probability for a single feature row."""
    return float(model.predict_proba(np.asarray(x, dtype=float).reshape(1, -1))[0])


def _grow_tree(X, binned, thresholds, g, h, sample, params, columns):
    tree = CentralTree()
    root = tree.add_node()
    leaf_of_row = np.zeros(X.shape[0], dtype=np.int64)
    frontier = [(root, np.arange(X.shape[0]), 0)]
    n_bins = [len(t) for t in thresholds]
    while frontier:
        next_frontier = []
        for node, rows, depth in frontier:
            train = rows[sample[rows]]
            g_tot, h_tot = float(np.sum(g[train])), float(np.sum(h[train]))
            best = None
            if depth < params.max_depth and len(train) >= params.min_child and columns:
                hist = aggregate_histogram(train, binned, g, h, n_bins)
                best = best_split_in_histogram(hist, g_tot, h_tot, params, features=columns)
            if best is None or best.gain <= 0:
                tree.weight[node] = leaf_weight(g_tot, h_tot, params.reg_lambda)
                leaf_of_row[rows] = node
                continue
            k, v = best.feature, best.threshold_id
            tree.feature[node] = k
            tree.threshold[node] = float(thresholds[k][v])
            go_left = X[rows, k] <= thresholds[k][v]
            left, right = tree.add_node(), tree.add_node()
            tree.left[node], tree.right[node] = left, right
            next_frontier.append((left, rows[go_left], depth + 1))
            next_frontier.append((right, rows[~go_left], depth + 1))
        frontier = next_frontier
    return tree, leaf_of_row


def train_centralized(X, y, params=None, first_tree_columns: Optional[Sequence[int]] = None):
    """Fit a boosted ensemble on the full joined matrix.

    ``first_tree_columns`` restricts the first tree to a subset of columns,
    which reproduces the completely-secure variant where the label holder
    builds tree one alone.
    """
    params = (params or BoostingParams()).validate()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DomainError("X must be a non-empty 2-D array")
    if len(y) != X.shape[0]:
        raise DomainError("X and y disagree on the number of rows")
    if np.isnan(X).any():
        raise DomainError("missing values are not supported")
    n, d = X.shape
    thresholds = [propose_thresholds(X[:, k], params.n_bins) for k in range(d)]
    binned = bin_matrix(X, thresholds)
    rng = np.random.default_rng(params.seed)
    raw = np.full(n, logit(params.base_score))
    trees = []
    for t in range(params.n_trees):
        g, h = logistic_grads(y, raw, params.scale_bits)
        sample = subsample_rows(rng, n, params.subsample)
        columns = list(range(d))
        if t == 0 and first_tree_columns is not None:
            columns = sorted(first_tree_columns)
        tree, leaf_of_row = _grow_tree(X, binned, thresholds, g, h, sample, params, columns)
        raw = raw + params.learning_rate * np.asarray(tree.weight)[leaf_of_row]
        trees.append(tree)
    return CentralModel(trees, params.learning_rate, params.base_score, d)
