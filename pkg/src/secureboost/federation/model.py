"""Distributed tree model and per-party lookup tables, plus their JSON files.

The model file only holds ``(party_id, record_id)`` references and leaf
weights. Which feature and threshold a record stands for lives in the owning
party's lookup table, which is persisted separately.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError, ValidationError

MODEL_FORMAT = "secureboost-model"
LOOKUP_FORMAT = "secureboost-lookup"
FORMAT_VERSION = 1

STANDARD = "standard"
COMPLETELY_SECURE = "completely-secure"
MODES = (STANDARD, COMPLETELY_SECURE)


@dataclass
class LookupTable:
    party_id: int
    feature_names: list
    features: list = field(default_factory=list)
    thresholds: list = field(default_factory=list)

    def add(self, feature, threshold):
        self.features.append(int(feature))
        self.thresholds.append(float(threshold))
        return len(self.features) - 1

    def __getitem__(self, record_id):
        if not 0 <= record_id < len(self.features):
            raise InputError(f"party {self.party_id} has no record {record_id}")
        return self.features[record_id], self.thresholds[record_id]

    def __len__(self):
        return len(self.features)

    def to_dict(self):
        return {
            "format": LOOKUP_FORMAT,
            "version": FORMAT_VERSION,
            "party_id": self.party_id,
            "feature_names": list(self.feature_names),
            "records": [
                {"record_id": i, "feature": k, "feature_name": self.feature_names[k],
                 "threshold": thr}
                for i, (k, thr) in enumerate(zip(self.features, self.thresholds))
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        _check_format(doc, LOOKUP_FORMAT)
        table = cls(doc["party_id"], list(doc["feature_names"]))
        for i, rec in enumerate(doc["records"]):
            if rec["record_id"] != i:
                raise ValidationError("lookup records must be dense and ordered")
            table.add(rec["feature"], rec["threshold"])
        return table


@dataclass
class FedTree:
    """BFS-ordered node arrays. Internal nodes: party_id/record_id; leaves: weight."""
    party_id: list = field(default_factory=list)
    record_id: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    weight: list = field(default_factory=list)

    def add_node(self):
        self.party_id.append(0)
        self.record_id.append(-1)
        self.left.append(-1)
        self.right.append(-1)
        self.weight.append(0.0)
        return len(self.left) - 1

    @property
    def n_nodes(self):
        return len(self.left)

    def is_leaf(self, node):
        return self.left[node] < 0

    def leaves(self):
        return [i for i in range(self.n_nodes) if self.is_leaf(i)]

    def parent(self, node):
        for i in range(self.n_nodes):
            if self.left[i] == node or self.right[i] == node:
                return i
        return None

    def to_dict(self):
        nodes = []
        for i in range(self.n_nodes):
            if self.is_leaf(i):
                nodes.append({"id": i, "leaf": True, "weight": self.weight[i]})
            else:
                nodes.append({"id": i, "leaf": False, "party_id": self.party_id[i],
                              "record_id": self.record_id[i],
                              "left": self.left[i], "right": self.right[i]})
        return {"nodes": nodes}

    @classmethod
    def from_dict(cls, doc):
        tree = cls()
        for i, node in enumerate(doc["nodes"]):
            if node["id"] != i:
                raise ValidationError("tree nodes must be stored in id order")
            tree.add_node()
            if node["leaf"]:
                tree.weight[i] = float(node["weight"])
            else:
                tree.party_id[i] = int(node["party_id"])
                tree.record_id[i] = int(node["record_id"])
                tree.left[i] = int(node["left"])
                tree.right[i] = int(node["right"])
        return tree


@dataclass
class FedModel:
    trees: list
    learning_rate: float
    base_score: float
    mode: str = STANDARD
    party_ids: list = field(default_factory=lambda: [1])

    @property
    def base_raw(self):
        return float(np.log(self.base_score / (1.0 - self.base_score)))

    def to_dict(self):
        return {
            "format": MODEL_FORMAT,
            "version": FORMAT_VERSION,
            "mode": self.mode,
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "party_ids": list(self.party_ids),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, doc):
        _check_format(doc, MODEL_FORMAT)
        if doc["mode"] not in MODES:
            raise ValidationError(f"unknown model mode {doc['mode']!r}")
        return cls([FedTree.from_dict(t) for t in doc["trees"]], float(doc["learning_rate"]),
                   float(doc["base_score"]), doc["mode"], list(doc["party_ids"]))

    def dumps(self):
        return dumps(self.to_dict())

    def staged_raw(self, leaves):
        """Raw scores after each tree (trees x rows) from leaf ids (rows x trees)."""
        leaves = np.asarray(leaves)
        raw = np.full(leaves.shape[0], self.base_raw)
        out = []
        for t, tree in enumerate(self.trees):
            raw = raw + self.learning_rate * np.asarray(tree.weight)[leaves[:, t]]
            out.append(raw)
        return np.array(out).reshape(len(self.trees), leaves.shape[0])

    def raw_from_leaves(self, leaves):
        if not self.trees:
            return np.full(np.asarray(leaves).shape[0], self.base_raw)
        return self.staged_raw(leaves)[-1]


def _check_format(doc, expected):
    if doc.get("format") != expected:
        raise ValidationError(f"expected a {expected} document, got {doc.get('format')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported {expected} version {doc.get('version')!r}")


def dumps(doc):
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def save_model(model, path):
    with open(path, "w") as fh:
        fh.write(model.dumps())


def load_model(path):
    with open(path) as fh:
        return FedModel.from_dict(json.load(fh))


def save_lookup(table, path):
    with open(path, "w") as fh:
        fh.write(dumps(table.to_dict()))


def load_lookup(path):
    with open(path) as fh:
        return LookupTable.from_dict(json.load(fh))


def resolve_tree(tree, lookups, column_offsets):
    """Rewrite a federated tree as (global feature, threshold) per node.

    ``column_offsets[party_id]`` is where that party's columns start in the
    joined matrix. Returns lists usable for comparison with a
    :class:`~secureboost.boosting.CentralTree`.
    """
    features, thresholds = [], []
    for i in range(tree.n_nodes):
        if tree.is_leaf(i):
            features.append(-1)
            thresholds.append(0.0)
            continue
        k, thr = lookups[tree.party_id[i]][tree.record_id[i]]
        features.append(column_offsets[tree.party_id[i]] + k)
        thresholds.append(thr)
    return features, thresholds
