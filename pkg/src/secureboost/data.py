"""Datasets: synthetic generators, CSV files, vertical splits, train/test splits.

CSV layout: an ``id`` column, an optional ``label`` column (0/1, active party
only) and numeric feature columns. Missing values are rejected.
"""
import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ValidationError

# (positive rate, label noise scale). The credit profiles' noise is set so a
# default model reaches about the AUC reported on the public credit datasets
# they imitate (0.85 and 0.77). A rate of None makes labels pure coin flips.
PROFILES = {
    "credit1": (0.07, 0.8),
    "credit2": (0.22, 1.3),
    "balanced": (0.5, 0.4),
    "random": (None, 0.4),
}


@dataclass
class Dataset:
    ids: list
    X: np.ndarray
    feature_names: list
    y: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.ids), -1)
        if self.X.shape[1] != len(self.feature_names):
            raise ValidationError("feature names do not match the columns")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("ids must be unique")
        if self.y is not None:
            self.y = np.asarray(self.y)
            if self.y.shape != (len(self.ids),) or not np.isin(self.y, (0, 1)).all():
                raise ValidationError("labels must be 0/1, one per row")
            self.y = self.y.astype(np.int64)

    @property
    def n_rows(self):
        return len(self.ids)

    def take(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset([self.ids[i] for i in rows], self.X[rows], list(self.feature_names),
                       None if self.y is None else self.y[rows])

    def columns(self, names):
        idx = [self.feature_names.index(c) for c in names]
        return Dataset(list(self.ids), self.X[:, idx], list(names), self.y)


def synth(profile="credit2", n=1000, d=10, seed=0):
    """Seeded synthetic credit-style table.

    Features are mostly standard normal with a few skewed, amount-like
    columns. The label thresholds a latent score built from every feature
    (weights decay with the column index), one pairwise interaction and
    logistic noise, so each vertical half carries signal and the positive
    rate matches the profile.
    """
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    if n < 10 or d < 2:
        raise ConfigurationError("need n >= 10 and d >= 2")
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, d))
    beta = 1.0 / np.sqrt(1.0 + np.arange(d)) * np.where(np.arange(d) % 3 == 2, -1.0, 1.0)
    rate, noise = PROFILES[profile]
    latent = Z @ beta + 0.8 * Z[:, 0] * Z[:, d // 2] + rng.logistic(0.0, noise, n)
    if rate is None:
        y = (rng.random(n) < 0.5).astype(np.int64)
    else:
        y = (latent > np.quantile(latent, 1.0 - rate)).astype(np.int64)
    X = Z.copy()
    skewed = np.arange(d) % 4 == 1
    X[:, skewed] = np.round(np.exp(1.0 + 0.75 * Z[:, skewed]) * 1000.0, 2)
    X[:, ~skewed] = np.round(X[:, ~skewed], 6)
    width = max(6, int(math.log10(n)) + 1)
    ids = [f"id{i:0{width}d}" for i in range(n)]
    names = [f"x{k}" for k in range(d)]
    return Dataset(ids, X, names, y, {"profile": profile, "seed": seed})


def _format(v):
    return repr(float(v))


def write_csv(path, dataset):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        head = ["id"] + (["label"] if dataset.y is not None else []) + list(dataset.feature_names)
        writer.writerow(head)
        for i, uid in enumerate(dataset.ids):
            row = [uid]
            if dataset.y is not None:
                row.append(str(int(dataset.y[i])))
            row.extend(_format(v) for v in dataset.X[i])
            writer.writerow(row)


def read_csv(path, require_label=False):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if "id" not in header:
            raise ValidationError(f"{path}: missing 'id' column")
        if require_label and "label" not in header:
            raise ValidationError(f"{path}: missing 'label' column")
        if len(set(header)) != len(header):
            raise ValidationError(f"{path}: duplicate column names")
        id_col = header.index("id")
        label_col = header.index("label") if "label" in header else None
        feat_cols = [i for i, c in enumerate(header) if c not in ("id", "label")]
        ids, labels, rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields")
            if not row[id_col]:
                raise ValidationError(f"{path}:{lineno}: empty id")
            ids.append(row[id_col])
            try:
                values = [float(row[i]) for i in feat_cols]
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-numeric or missing value") from None
            if any(math.isnan(v) or math.isinf(v) for v in values):
                raise ValidationError(f"{path}:{lineno}: missing or infinite value")
            rows.append(values)
            if label_col is not None:
                if row[label_col] not in ("0", "1"):
                    raise ValidationError(f"{path}:{lineno}: label must be 0 or 1")
                labels.append(int(row[label_col]))
    X = np.array(rows, dtype=float).reshape(len(ids), len(feat_cols))
    y = np.array(labels, dtype=np.int64) if label_col is not None else None
    try:
        return Dataset(ids, X, [header[i] for i in feat_cols], y)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def split_columns(dataset, parts, overlap=1.0, seed=0):
    """Vertical split. ``parts`` lists the feature columns of each party.

    The first part belongs to the active party and keeps the labels. With
    ``overlap < 1`` every party independently keeps that fraction of rows, so
    the parties only partially share users.
    """
    assigned = [c for part in parts for c in part]
    if "label" in assigned:
        raise ValidationError("the label column always stays with the active party")
    unknown = sorted(set(assigned) - set(dataset.feature_names))
    if unknown:
        raise ConfigurationError(f"unknown columns: {unknown}")
    missing = [c for c in dataset.feature_names if c not in assigned]
    if missing:
        raise ConfigurationError(f"columns not assigned to any party: {missing}")
    if len(assigned) != len(set(assigned)):
        raise ConfigurationError("a column is assigned to more than one party")
    if not 0.0 < overlap <= 1.0:
        raise ConfigurationError("overlap must be in (0, 1]")
    rng = np.random.default_rng(seed)
    out = []
    for i, part in enumerate(parts):
        block = dataset.columns(part)
        if i > 0:
            block.y = None
        if overlap < 1.0:
            keep = np.sort(rng.permutation(dataset.n_rows)[:max(1, round(overlap * dataset.n_rows))])
            block = block.take(keep)
        out.append(block)
    return out


def parse_parts(text, feature_names):
    """``"x0,x1;x2,x3"`` or ``"5,5"`` (column counts) into column lists."""
    if text.replace(",", "").isdigit():
        counts = [int(c) for c in text.split(",")]
        if sum(counts) != len(feature_names):
            raise ConfigurationError(f"column counts {counts} do not add up to {len(feature_names)}")
        bounds = np.cumsum([0] + counts)
        return [feature_names[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    return [[c.strip() for c in g.split(",") if c.strip()] for g in text.split(";")]


def train_test_split(n, train_fraction=2 / 3, seed=0):
    """Row indices of a seeded shuffle split (train first)."""
    perm = np.random.default_rng(seed).permutation(n)
    cut = int(round(train_fraction * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])
