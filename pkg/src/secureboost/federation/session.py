"""Wiring parties together for a training/inference session.

:class:`Federation` runs every party in one process: passive parties on their
own threads, the active party on the caller's thread, connected either by
in-process queues or by localhost sockets. Deployments with one party per
process use :class:`~secureboost.federation.parties.ActiveParty` and
:class:`~secureboost.federation.parties.PassiveParty` directly (see the CLI).
"""
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..boosting import BoostingParams, sigmoid
from ..errors import InputError, ProtocolError, ValidationError
from . import transport
from .messages import Tag
from .model import STANDARD
from .parties import ACTIVE_PARTY_ID, ActiveParty, PassiveParty, config_checksum

PHASES = {
    Tag.HELLO: "setup", Tag.HELLO_ACK: "setup", Tag.PUBLIC_KEY: "setup",
    Tag.SESSION_END: "setup", Tag.ABORT: "setup",
    Tag.TREE_START: "gradients", Tag.GRADIENTS: "gradients",
    Tag.HIST_REQUEST: "histograms", Tag.HISTOGRAMS: "histograms",
    Tag.SPLIT_ANNOUNCE: "splits", Tag.SPLIT_RESULT: "splits",
    Tag.INFER_QUERY: "inference", Tag.INFER_DIRECTION: "inference",
    Tag.LEAF_ARRIVAL: "inference",
}


@dataclass
class PartyData:
    """One party's aligned feature block (and labels, for the active party)."""
    party_id: int
    X: np.ndarray
    feature_names: list = field(default_factory=list)
    y: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if not self.feature_names:
            self.feature_names = [f"p{self.party_id}_f{k}" for k in range(self.X.shape[1])]
        if len(self.feature_names) != self.X.shape[1]:
            raise ValidationError(f"party {self.party_id}: feature names do not match columns")


def vertical_partition(X, y, column_groups, feature_names=None):
    """Split a joined matrix into per-party blocks; group 0 becomes the active party."""
    X = np.asarray(X, dtype=float)
    names = feature_names or [f"x{k}" for k in range(X.shape[1])]
    parties = []
    for i, cols in enumerate(column_groups):
        cols = list(cols)
        parties.append(PartyData(i + 1, X[:, cols], [names[c] for c in cols],
                                 y if i == 0 else None))
    return parties


class Federation:
    """All parties of one session, simulated in a single process."""

    def __init__(self, parties, params=None, key_bits=512, mode=STANDARD,
                 transport_kind="inprocess", crypto_seed=None, record=False):
        params = (params or BoostingParams()).validate()
        parties = sorted(parties, key=lambda p: p.party_id)
        if not parties or parties[0].party_id != ACTIVE_PARTY_ID or parties[0].y is None:
            raise ValidationError("party 1 must be the active party and hold the labels")
        if any(p.y is not None for p in parties[1:]):
            raise ValidationError("only the active party may hold labels")
        if len({p.party_id for p in parties}) != len(parties):
            raise ValidationError("party ids must be unique")
        n = parties[0].X.shape[0]
        if any(p.X.shape[0] != n for p in parties):
            raise ValidationError("all parties must hold the same aligned rows")
        self.params = params
        self.mode = mode
        self.key_bits = key_bits
        self.transport_kind = transport_kind
        self.checksum = config_checksum(params, mode, key_bits)
        self.passive = {}
        self._threads = []
        self._errors = {}
        self._closed = False

        channels = {}
        for pdata in parties[1:]:
            pid = pdata.party_id
            party = PassiveParty(pid, pdata.X, None, params, self.checksum, pdata.feature_names)
            self.passive[pid] = party
            if transport_kind == "inprocess":
                active_end, passive_end = transport.channel_pair(f"1-{pid}", record)
                party.channel = passive_end
                channels[pid] = active_end
                self._start(party, None, record)
            elif transport_kind == "socket":
                server = transport.listen("127.0.0.1:0")
                address = f"127.0.0.1:{server.getsockname()[1]}"
                self._start(party, server, record)
                channels[pid] = transport.connect(address, f"1-{pid}", record)
            else:
                raise ValidationError(f"unknown transport {transport_kind!r}")
        active = parties[0]
        self.active = ActiveParty(active.X, active.y, channels, params, self.checksum,
                                  key_bits, mode, crypto_seed, active.feature_names)

    def _start(self, party, server, record):
        def run():
            try:
                if server is not None:
                    try:
                        party.channel = transport.accept(server, f"{party.party_id}-1", record)
                    finally:
                        server.close()
                party.serve()
            except Exception as exc:
                self._errors[party.party_id] = exc
        thread = threading.Thread(target=run, name=f"party-{party.party_id}", daemon=True)
        thread.start()
        self._threads.append(thread)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _run(self, fn, *args):
        try:
            return fn(*args)
        except ProtocolError:
            self._fail()
            raise
        except Exception as exc:
            self.active.abort(str(exc))
            self._fail()
            raise

    def _fail(self):
        self._join()
        self._closed = True

    def _join(self, timeout=30):
        for thread in self._threads:
            thread.join(timeout)

    @property
    def model(self):
        return self.active.model

    @property
    def lookups(self):
        tables = {ACTIVE_PARTY_ID: self.active.lookup}
        tables.update({pid: p.lookup for pid, p in self.passive.items()})
        return tables

    def fit(self):
        return self._run(self.active.fit)

    def _load_queries(self, queries):
        if set(queries) != {ACTIVE_PARTY_ID, *self.passive}:
            raise InputError("every party must supply its slice of the query rows")
        m = np.asarray(queries[ACTIVE_PARTY_ID]).shape[0]
        for pid, party in self.passive.items():
            Xq = np.asarray(queries[pid], dtype=float)
            if Xq.shape[0] != m:
                raise InputError("query slices must hold the same aligned rows")
            if Xq.shape[1] != party.X.shape[1]:
                raise InputError(f"party {pid} query slice has the wrong number of features")
            party.load_queries(Xq)
        return np.asarray(queries[ACTIVE_PARTY_ID], dtype=float)

    def apply(self, queries, record_paths=False):
        """Leaf ids (rows x trees) for rows given as ``{party_id: feature block}``."""
        X_own = self._load_queries(queries)
        return self._run(lambda: self.active.apply(X_own, record_paths=record_paths))

    def predict_proba(self, queries):
        X_own = self._load_queries(queries)
        return sigmoid(self._run(lambda: self.active.decision_function(X_own)))

    def cost_report(self):
        return cost_report(self.active)

    def close(self):
        if self._closed:
            return
        self._closed = True
        try:
            self.active.end_session()
        except Exception:
            pass
        self._join()
        for ch in self.active.channels.values():
            ch.close()
        for party in self.passive.values():
            if party.channel is not None:
                party.channel.close()

    def raise_party_errors(self):
        if self._errors:
            pid, exc = sorted(self._errors.items())[0]
            raise ProtocolError(f"party {pid} failed: {exc}") from exc


def cost_report(active):
    """Per-party, per-phase traffic seen by the active party plus per-node counts."""
    report = {"key_bits": active.key_bits, "n_rows": active.n_rows, "parties": {}, "nodes": []}
    for pid, ch in active.channels.items():
        phases = {}
        for tag in set(ch.sent_by_tag) | set(ch.received_by_tag):
            ph = phases.setdefault(PHASES[tag], {"frames": 0, "bytes": 0, "ciphertexts": 0})
            ph["frames"] += ch.sent_by_tag[tag] + ch.received_by_tag[tag]
            ph["bytes"] += ch.bytes_by_tag[tag] + ch.bytes_received_by_tag[tag]
            ph["ciphertexts"] += ch.ciphertexts_by_tag[tag] + ch.ciphertexts_received_by_tag[tag]
        report["parties"][pid] = {
            "n_features": active.passive_features.get(pid, 0),
            "bytes_to_party": ch.bytes_sent,
            "bytes_from_party": ch.bytes_received,
            "gradient_ciphertexts": ch.ciphertexts_by_tag[Tag.GRADIENTS],
            "gradient_messages": ch.sent_by_tag[Tag.GRADIENTS],
            "histogram_ciphertexts": ch.ciphertexts_received_by_tag[Tag.HISTOGRAMS],
            "phases": dict(sorted(phases.items())),
        }
    n_bins = active.params.n_bins
    for entry in active.node_log:
        d = entry["n_features"]
        row = dict(entry)
        row["bucket_bound"] = 2 * n_bins * d
        row["naive_bound"] = 2 * entry["n_instances"] * d
        row["expected"] = 2 * sum(entry["bins"])
        report["nodes"].append(row)
    nodes = report["nodes"]
    report["summary"] = {
        "histogram_nodes": len(nodes),
        "max_node_ciphertexts": max((r["ciphertexts"] for r in nodes), default=0),
        "all_within_bucket_bound": all(r["ciphertexts"] <= r["bucket_bound"] for r in nodes),
        "all_match_effective_bins": all(r["ciphertexts"] == r["expected"] for r in nodes),
    }
    return report


def train_federated(parties, params=None, key_bits=512, mode=STANDARD,
                    transport_kind="inprocess", crypto_seed=None):
    """Train and return ``(model, lookup tables, cost report)``; closes the session."""
    with Federation(parties, params, key_bits, mode, transport_kind, crypto_seed) as fed:
        model = fed.fit()
        return model, fed.lookups, fed.cost_report()


def federated_predict(federation, queries):
    return federation.predict_proba(queries)


def run_inference(model, lookups, blocks, transport_kind="inprocess", record_paths=False):
    """Federated inference with a persisted model and each party's lookup table.

    ``blocks`` maps party id to that party's slice of the (aligned) query rows.
    Returns ``(leaf ids rows x trees, node-owner paths or None)``.
    """
    if set(blocks) != set(lookups) or ACTIVE_PARTY_ID not in blocks:
        raise InputError("every party needs both its lookup table and its query slice")
    m = np.asarray(blocks[ACTIVE_PARTY_ID]).shape[0]
    if any(np.asarray(b).shape[0] != m for b in blocks.values()):
        raise InputError("query slices must hold the same aligned rows")
    params = BoostingParams()
    threads, errors, channels, passive = [], {}, {}, []
    for pid in sorted(p for p in blocks if p != ACTIVE_PARTY_ID):
        party = PassiveParty(pid, blocks[pid], None, params, b"", lookups[pid].feature_names)
        party.lookup = lookups[pid]
        party.load_queries(blocks[pid])
        passive.append(party)
        server = None
        if transport_kind == "inprocess":
            channels[pid], party.channel = transport.channel_pair(f"1-{pid}")
        elif transport_kind == "socket":
            server = transport.listen("127.0.0.1:0")
        else:
            raise ValidationError(f"unknown transport {transport_kind!r}")

        def serve(party=party, server=server):
            try:
                if server is not None:
                    try:
                        party.channel = transport.accept(server, f"{party.party_id}-1")
                    finally:
                        server.close()
                party.serve()
            except Exception as exc:
                errors[party.party_id] = exc
        thread = threading.Thread(target=serve, daemon=True)
        thread.start()
        threads.append(thread)
        if server is not None:
            channels[pid] = transport.connect(f"127.0.0.1:{server.getsockname()[1]}", f"1-{pid}")
    own = np.asarray(blocks[ACTIVE_PARTY_ID], dtype=float)
    active = ActiveParty(own, np.zeros(m), channels, params, b"",
                         feature_names=lookups[ACTIVE_PARTY_ID].feature_names)
    active.lookup = lookups[ACTIVE_PARTY_ID]
    try:
        leaves = active.apply(own, model=model, record_paths=record_paths)
        active.end_session()
    except Exception as exc:
        active.abort(str(exc))
        raise
    finally:
        for thread in threads:
            thread.join(30)
        for ch in channels.values():
            ch.close()
        for party in passive:
            party.channel.close()
    if errors:
        pid, exc = sorted(errors.items())[0]
        raise ProtocolError(f"party {pid} failed: {exc}") from exc
    return leaves, active.inference_paths
