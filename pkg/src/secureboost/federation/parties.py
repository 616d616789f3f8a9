"""Active and passive party state machines.

The active party holds labels and the Paillier private key and drives every
exchange. A passive party holds only its feature block; it answers requests
arriving on its channel until the session ends. Parties share nothing but
messages.
"""
import hashlib
import json
import logging

import numpy as np

from .._random import RandomSource
from ..boosting import (HistogramPair, aggregate_histogram, best_split_in_histogram,
                        bin_matrix, leaf_weight, logistic_grads, logit, propose_thresholds,
                        subsample_rows)
from ..errors import ProtocolError, ValidationError
from ..paillier import FixedPointCodec, keygen
from . import messages
from .messages import Tag
from .model import COMPLETELY_SECURE, MODES, FedModel, FedTree, LookupTable

log = logging.getLogger(__name__)

ACTIVE_PARTY_ID = 1


def config_checksum(params, mode, key_bits):
    doc = {"params": params.to_dict(), "mode": mode, "key_bits": key_bits}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).digest()


def _feature_bins(X, n_bins):
    thresholds = [propose_thresholds(X[:, k], n_bins) for k in range(X.shape[1])]
    return thresholds, bin_matrix(X, thresholds)


class PassiveParty:
    """Feature holder. Call :meth:`serve` (typically on its own thread)."""

    def __init__(self, party_id, X, channel, params, checksum, feature_names=None):
        X = np.asarray(X, dtype=float)
        if np.isnan(X).any():
            raise ValidationError(f"party {party_id}: missing values are not supported")
        self.party_id = party_id
        self.X = X
        self.channel = channel
        self.checksum = checksum
        self.feature_names = list(feature_names or [f"f{k}" for k in range(X.shape[1])])
        self.thresholds, self.binned = _feature_bins(X, params.n_bins)
        self.lookup = LookupTable(party_id, self.feature_names)
        self.public_key = None
        self.enc_g = self.enc_h = None
        self.sample = None
        self.queries = None
        self.rows_classified = 0
        self._node_rows = {}
        self._handlers = {
            Tag.HELLO: self._on_hello,
            Tag.PUBLIC_KEY: self._on_public_key,
            Tag.TREE_START: self._on_tree_start,
            Tag.GRADIENTS: self._on_gradients,
            Tag.HIST_REQUEST: self._on_hist_request,
            Tag.SPLIT_ANNOUNCE: self._on_split_announce,
            Tag.INFER_QUERY: self._on_infer_query,
            Tag.LEAF_ARRIVAL: self._on_leaf_arrival,
        }

    @property
    def n_rows(self):
        return self.X.shape[0]

    def load_queries(self, X):
        """Local slice of the rows to classify next (aligned with the active party)."""
        self.queries = np.asarray(X, dtype=float)

    def serve(self):
        while True:
            msg = self.channel.recv()
            if msg.tag == Tag.SESSION_END:
                return
            if msg.tag == Tag.ABORT:
                raise ProtocolError(f"active party aborted: {msg['reason']}")
            handler = self._handlers.get(msg.tag)
            try:
                if handler is None:
                    raise ProtocolError(f"party {self.party_id} cannot handle {msg.tag.name}")
                handler(msg)
            except Exception as exc:
                self._abort(str(exc))
                raise

    def _abort(self, reason):
        try:
            self.channel.send(messages.make(Tag.ABORT, reason=f"party {self.party_id}: {reason}"))
        except Exception:  # peer may already be gone
            log.debug("could not deliver abort from party %d", self.party_id)

    def _reply(self, tag, **fields):
        self.channel.send(messages.make(tag, **fields))

    def _rows(self, mask):
        if len(mask) != self.n_rows:
            raise ProtocolError(
                f"row set covers {len(mask)} rows, party {self.party_id} has {self.n_rows}")
        return mask

    def _on_hello(self, msg):
        self._reply(Tag.HELLO_ACK, party_id=self.party_id, checksum=self.checksum,
                    n_features=self.X.shape[1], n_rows=self.n_rows)
        if msg["checksum"] != self.checksum:
            raise ProtocolError("configuration checksum mismatch")

    def _on_public_key(self, msg):
        self.public_key = msg["public_key"]
        self.channel.public_key = self.public_key

    def _on_tree_start(self, msg):
        self.sample = self._rows(msg["sample"])
        self._node_rows.clear()

    def _on_gradients(self, msg):
        if len(msg["g"]) != self.n_rows or len(msg["h"]) != self.n_rows:
            raise ProtocolError("gradient vector length does not match the aligned rows")
        self.enc_g, self.enc_h = msg["g"], msg["h"]

    def _on_hist_request(self, msg):
        if self.enc_g is None or self.sample is None:
            raise ProtocolError("histogram requested before gradients arrived")
        rows = self._rows(msg["rows"])
        self._node_rows[(msg["tree"], msg["node"])] = rows
        instances = np.flatnonzero(rows & self.sample)
        bins = [len(t) for t in self.thresholds]
        hist = aggregate_histogram(instances, self.binned, self.enc_g, self.enc_h, bins,
                                   zero=lambda: self.public_key.encrypt(0))
        self._reply(Tag.HISTOGRAMS, tree=msg["tree"], node=msg["node"], bins=bins,
                    G=[c for col in hist.G for c in col], H=[c for col in hist.H for c in col])

    def _on_split_announce(self, msg):
        key = (msg["tree"], msg["node"])
        if key not in self._node_rows:
            raise ProtocolError(f"split announced for unknown node {key}")
        k, v = msg["feature"], msg["threshold_id"]
        if not 0 <= k < len(self.thresholds) or not 0 <= v < len(self.thresholds[k]):
            raise ProtocolError(f"unknown split ({k}, {v})")
        threshold = float(self.thresholds[k][v])
        record_id = self.lookup.add(k, threshold)
        left = self._node_rows[key] & (self.X[:, k] <= threshold)
        self._reply(Tag.SPLIT_RESULT, tree=msg["tree"], node=msg["node"],
                    record_id=record_id, left=left)

    def _on_infer_query(self, msg):
        if self.queries is None:
            raise ProtocolError(f"party {self.party_id} has no query rows loaded")
        go_left = np.empty(len(msg["rows"]), dtype=bool)
        for j, (row, rid) in enumerate(zip(msg["rows"], msg["record_ids"])):
            k, threshold = self.lookup[rid]
            go_left[j] = self.queries[row, k] <= threshold
        self._reply(Tag.INFER_DIRECTION, go_left=go_left)

    def _on_leaf_arrival(self, msg):
        self.rows_classified += msg["n_rows"]


class ActiveParty:
    """Label holder and coordinator of training and inference."""

    party_id = ACTIVE_PARTY_ID

    def __init__(self, X, y, channels, params, checksum, key_bits=512, mode="standard",
                 rng=None, feature_names=None):
        if mode not in MODES:
            raise ValidationError(f"unknown mode {mode!r}")
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if len(y) != X.shape[0]:
            raise ValidationError("labels and features disagree on the number of rows")
        if np.isnan(X).any():
            raise ValidationError("missing values are not supported")
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValidationError("labels must be 0 or 1")
        self.X, self.y = X, y
        self.channels = dict(sorted(channels.items()))
        self.params = params.validate()
        self.checksum = checksum
        self.key_bits = key_bits
        self.mode = mode
        self.rng = rng if isinstance(rng, RandomSource) else RandomSource(rng)
        self.feature_names = list(feature_names or [f"f{k}" for k in range(X.shape[1])])
        self.thresholds, self.binned = _feature_bins(X, params.n_bins)
        self.lookup = LookupTable(self.party_id, self.feature_names)
        self.public_key = self.private_key = self.codec = None
        self.passive_features = {}
        self.model = None
        self.node_log = []
        self.inference_paths = None
        self.train_leaves = None

    @property
    def n_rows(self):
        return self.X.shape[0]

    def _expect(self, pid, tag):
        msg = self.channels[pid].recv()
        if msg.tag == Tag.ABORT:
            raise ProtocolError(msg["reason"])
        if msg.tag != tag:
            raise ProtocolError(f"expected {tag.name} from party {pid}, got {msg.tag.name}")
        return msg

    def _send(self, pid, tag, **fields):
        self.channels[pid].send(messages.make(tag, **fields))

    def abort(self, reason):
        for channel in self.channels.values():
            try:
                channel.send(messages.make(Tag.ABORT, reason=reason))
            except Exception:
                log.debug("could not deliver abort on %s", channel.name)

    def end_session(self):
        for channel in self.channels.values():
            channel.send(messages.make(Tag.SESSION_END))

    def handshake(self):
        self.public_key, self.private_key = keygen(self.key_bits, self.rng.spawn("keygen"))
        self.codec = FixedPointCodec(self.public_key.n, self.params.scale_bits or 40)
        self.codec.check_capacity(self.n_rows, bound=1.0)
        for pid in self.channels:
            self._send(pid, Tag.HELLO, party_id=pid, checksum=self.checksum)
        for pid, channel in self.channels.items():
            ack = self._expect(pid, Tag.HELLO_ACK)
            if ack["checksum"] != self.checksum:
                raise ProtocolError(f"party {pid} runs a different configuration")
            if ack["n_rows"] != self.n_rows:
                raise ProtocolError(f"party {pid} holds {ack['n_rows']} aligned rows, "
                                    f"expected {self.n_rows}")
            self.passive_features[pid] = ack["n_features"]
            channel.public_key = self.public_key
            self._send(pid, Tag.PUBLIC_KEY, public_key=self.public_key,
                       scale_bits=self.codec.scale_bits)

    # -- training -----------------------------------------------------------

    def fit(self):
        if self.public_key is None:
            self.handshake()
        p = self.params
        np_rng = np.random.default_rng(p.seed)
        nonce_rng = self.rng.spawn("nonces")
        raw = np.full(self.n_rows, logit(p.base_score))
        trees, leaves = [], []
        for t in range(p.n_trees):
            g, h = logistic_grads(self.y, raw, p.scale_bits)
            sample = subsample_rows(np_rng, self.n_rows, p.subsample)
            solo = self.mode == COMPLETELY_SECURE and t == 0
            participants = [] if solo else list(self.channels)
            if participants:
                enc_g = [self.public_key.encrypt(self.codec.encode(x), nonce_rng) for x in g]
                enc_h = [self.public_key.encrypt(self.codec.encode(x), nonce_rng) for x in h]
                for pid in participants:
                    self._send(pid, Tag.TREE_START, tree=t, sample=sample)
                    self._send(pid, Tag.GRADIENTS, tree=t, g=enc_g, h=enc_h)
            tree, leaf_of_row = self._grow_tree(t, g, h, sample, participants)
            raw = raw + p.learning_rate * np.asarray(tree.weight)[leaf_of_row]
            trees.append(tree)
            leaves.append(leaf_of_row)
            log.debug("tree %d: %d nodes", t, tree.n_nodes)
        self.model = FedModel(trees, p.learning_rate, p.base_score, self.mode,
                              [self.party_id] + list(self.channels))
        # the active party already knows every leaf's instance space
        self.train_leaves = np.column_stack(leaves) if leaves else np.zeros((self.n_rows, 0), int)
        return self.model

    def _decode_histogram(self, msg):
        bins = msg["bins"]
        G = [self.codec.decode(self.private_key.decrypt(c)) for c in msg["G"]]
        H = [self.codec.decode(self.private_key.decrypt(c)) for c in msg["H"]]
        bounds = np.cumsum([0] + list(bins))
        return ([np.array(G[a:b]) for a, b in zip(bounds[:-1], bounds[1:])],
                [np.array(H[a:b]) for a, b in zip(bounds[:-1], bounds[1:])])

    def _find_split(self, t, node, rows, train, g, h, participants):
        """Global best split across all parties, scanned in party order."""
        p = self.params
        g_tot, h_tot = float(np.sum(g[train])), float(np.sum(h[train]))
        for pid in participants:
            self._send(pid, Tag.HIST_REQUEST, tree=t, node=node, rows=rows)
        own_bins = [len(s) for s in self.thresholds]
        own = aggregate_histogram(np.flatnonzero(train), self.binned, g, h, own_bins)
        best = best_split_in_histogram(own, g_tot, h_tot, p, party_id=self.party_id)
        for pid in participants:
            msg = self._expect(pid, Tag.HISTOGRAMS)
            if (msg["tree"], msg["node"]) != (t, node):
                raise ProtocolError(f"party {pid} answered for the wrong node")
            n_ct = len(msg["G"]) + len(msg["H"])
            self.node_log.append({"tree": t, "node": node, "party_id": pid,
                                  "ciphertexts": n_ct, "bins": list(msg["bins"]),
                                  "n_features": len(msg["bins"]),
                                  "n_instances": int(train.sum())})
            G, H = self._decode_histogram(msg)
            cand = best_split_in_histogram(HistogramPair(G, H), g_tot, h_tot, p, party_id=pid)
            if cand is not None and (best is None or cand.gain > best.gain):
                best = cand
        return best

    def _apply_split(self, t, node, rows, best):
        if best.party_id == self.party_id:
            threshold = float(self.thresholds[best.feature][best.threshold_id])
            record_id = self.lookup.add(best.feature, threshold)
            return record_id, rows & (self.X[:, best.feature] <= threshold)
        pid = best.party_id
        self._send(pid, Tag.SPLIT_ANNOUNCE, tree=t, node=node, feature=best.feature,
                   threshold_id=best.threshold_id)
        reply = self._expect(pid, Tag.SPLIT_RESULT)
        if (reply["tree"], reply["node"]) != (t, node):
            raise ProtocolError(f"party {pid} answered for the wrong node")
        left = reply["left"]
        if len(left) != self.n_rows or (left & ~rows).any():
            raise ProtocolError(f"party {pid} returned an invalid left instance space")
        return reply["record_id"], left

    def _grow_tree(self, t, g, h, sample, participants):
        p = self.params
        tree = FedTree()
        root = tree.add_node()
        leaf_of_row = np.zeros(self.n_rows, dtype=np.int64)
        frontier = [(root, np.ones(self.n_rows, dtype=bool), 0)]
        while frontier:
            next_frontier = []
            for node, rows, depth in frontier:
                train = rows & sample
                best = None
                if depth < p.max_depth and train.sum() >= p.min_child:
                    best = self._find_split(t, node, rows, train, g, h, participants)
                if best is None or best.gain <= 0:
                    tree.weight[node] = leaf_weight(float(np.sum(g[train])),
                                                    float(np.sum(h[train])), p.reg_lambda)
                    leaf_of_row[rows] = node
                    continue
                record_id, left = self._apply_split(t, node, rows, best)
                tree.party_id[node] = best.party_id
                tree.record_id[node] = record_id
                lnode, rnode = tree.add_node(), tree.add_node()
                tree.left[node], tree.right[node] = lnode, rnode
                next_frontier.append((lnode, left, depth + 1))
                next_frontier.append((rnode, rows & ~left, depth + 1))
            frontier = next_frontier
        return tree, leaf_of_row

    # -- inference ----------------------------------------------------------

    def apply(self, X_own, n_rows=None, model=None, record_paths=False):
        """Leaf ids (rows x trees) for query rows split across the parties.

        Every tree level costs one query/reply per passive party that owns at
        least one of the nodes currently being visited.
        """
        model = model or self.model
        X_own = np.asarray(X_own, dtype=float)
        m = X_own.shape[0] if n_rows is None else n_rows
        K = len(model.trees)
        node = np.zeros((m, K), dtype=np.int64)
        paths = [[[] for _ in range(K)] for _ in range(m)] if record_paths else None
        while True:
            pending = {}
            for t, tree in enumerate(model.trees):
                for r in range(m):
                    nid = node[r, t]
                    if tree.is_leaf(nid):
                        continue
                    owner = tree.party_id[nid]
                    pending.setdefault(owner, []).append((r, t, nid))
                    if paths is not None:
                        paths[r][t].append(owner)
            if not pending:
                break
            decisions = {}
            for owner in sorted(pending):
                items = pending[owner]
                if owner == self.party_id:
                    for r, t, nid in items:
                        k, thr = self.lookup[model.trees[t].record_id[nid]]
                        decisions[(r, t)] = X_own[r, k] <= thr
                    continue
                if owner not in self.channels:
                    raise ProtocolError(f"model references unknown party {owner}")
                self._send(owner, Tag.INFER_QUERY, rows=[r for r, _, _ in items],
                           record_ids=[model.trees[t].record_id[nid] for _, t, nid in items])
            for owner in sorted(pending):
                if owner == self.party_id:
                    continue
                reply = self._expect(owner, Tag.INFER_DIRECTION)
                items = pending[owner]
                if len(reply["go_left"]) != len(items):
                    raise ProtocolError(f"party {owner} answered {len(reply['go_left'])} "
                                        f"of {len(items)} queries")
                for (r, t, _), go in zip(items, reply["go_left"]):
                    decisions[(r, t)] = bool(go)
            for (r, t), go in decisions.items():
                tree = model.trees[t]
                nid = node[r, t]
                node[r, t] = tree.left[nid] if go else tree.right[nid]
        for pid in self.channels:
            self._send(pid, Tag.LEAF_ARRIVAL, n_rows=m)
        self.inference_paths = paths
        return node

    def decision_function(self, X_own, n_rows=None, model=None):
        model = model or self.model
        leaves = self.apply(X_own, n_rows, model)
        raw = np.full(leaves.shape[0], model.base_raw)
        for t, tree in enumerate(model.trees):
            raw = raw + model.learning_rate * np.asarray(tree.weight)[leaves[:, t]]
        return raw
