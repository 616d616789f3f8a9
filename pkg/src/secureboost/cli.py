"""Command-line interface: ``secureboost <command> [options]``.

Commands: synth, split, align, train, predict, analyze, cost. Run
``secureboost <command> -h`` for the options of each.

Exit status: 0 success, 2 invalid input or configuration, 3 protocol abort,
4 oracle check failed.
"""
import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import alignment, data, metrics, security
from .boosting import BoostingParams, sigmoid, train_centralized
from .errors import ProtocolError, SecureBoostError, ValidationError
from .federation import transport
from .federation.model import (COMPLETELY_SECURE, MODES, STANDARD, dumps, load_lookup,
                               load_model, resolve_tree, save_lookup, save_model)
from .federation.parties import ACTIVE_PARTY_ID, ActiveParty, PassiveParty, config_checksum
from .federation.session import Federation, PartyData, cost_report, run_inference

log = logging.getLogger("secureboost")

EXIT_OK, EXIT_INVALID, EXIT_PROTOCOL, EXIT_ORACLE = 0, 2, 3, 4


class OracleMismatch(SecureBoostError):
    pass


@dataclass
class RunConfig:
    n_trees: int = 25
    max_depth: int = 3
    learning_rate: float = 0.3
    reg_lambda: float = 1.0
    gamma: float = 0.0
    subsample: float = 0.8
    n_bins: int = 32
    base_score: float = 0.5
    min_child: int = 1
    scale_bits: int = 40
    seed: int = 0
    key_bits: int = 512
    rsa_bits: int = 1024
    mode: str = STANDARD
    transport: str = "inprocess"
    train_fraction: float = 2 / 3
    crypto_seed: Optional[int] = None

    def params(self):
        return BoostingParams(self.n_trees, self.max_depth, self.learning_rate, self.reg_lambda,
                              self.gamma, self.subsample, self.n_bins, self.base_score,
                              self.min_child, self.scale_bits, self.seed).validate()

    def validate(self):
        self.params()
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")
        if self.transport not in ("inprocess", "socket"):
            raise ValidationError("transport must be 'inprocess' or 'socket'")
        if not 0 < self.train_fraction <= 1:
            raise ValidationError("train_fraction must lie in (0, 1]")
        return self


def load_config(path=None, overrides=None):
    """Defaults, then the JSON config file, then command-line flags."""
    values = {}
    if path:
        with open(path) as fh:
            doc = json.load(fh)
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {unknown}")
        values.update(doc)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values).validate()


def _add_config_flags(p):
    p.add_argument("--config", help="JSON file with run settings; flags override it")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = {"mode": str, "transport": str}.get(f.name)
        if kind is None:
            kind = float if isinstance(f.default, float) else int
        choices = {"mode": MODES, "transport": ("inprocess", "socket")}.get(f.name)
        p.add_argument(flag, dest=f.name, type=kind, choices=choices, default=None,
                       help=f"default {f.default}")


def _config(args):
    return load_config(args.config, {f.name: getattr(args, f.name) for f in fields(RunConfig)})


def _write_json(path, doc):
    Path(path).write_text(dumps(doc))


def _party_file(out_dir, pid):
    return Path(out_dir) / f"party{pid}.csv"


# -- synth / split / align ----------------------------------------------------

def cmd_synth(args):
    ds = data.synth(args.profile, args.n, args.d, args.seed)
    data.write_csv(args.out, ds)
    print(f"wrote {args.out}: {ds.n_rows} rows, {len(ds.feature_names)} features, "
          f"positive rate {ds.y.mean():.4f}")


def cmd_split(args):
    ds = data.read_csv(args.source, require_label=True)
    parts = data.parse_parts(args.parts, ds.feature_names)
    blocks = data.split_columns(ds, parts, args.overlap, args.seed)
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    for pid, block in enumerate(blocks, start=1):
        data.write_csv(_party_file(args.out_dir, pid), block)
        print(f"party {pid}: {block.n_rows} rows, columns {block.feature_names}")


def cmd_align(args):
    cfg = _config(args)
    sets = [data.read_csv(path) for path in args.data]
    if len(sets) < 2:
        raise ValidationError("alignment needs at least two parties")
    ids = {pid: ds.ids for pid, ds in enumerate(sets, start=1)}
    report = {"parties": {pid: len(v) for pid, v in ids.items()}}
    if len(sets) == 2:
        result = alignment.align(ids[1], ids[2], cfg.rsa_bits, rng=cfg.crypto_seed,
                                 record=args.audit)
        shared, maps = result.shared_ids, {1: result.row_index_map["A"],
                                            2: result.row_index_map["B"]}
        report["bytes"] = result.bytes_exchanged
        if args.audit:
            audit = alignment.transcript_audit(result.transcript, ids[1], ids[2])
            report["audit"] = {"frames": audit.frames, "violations": audit.violations}
    else:
        shared, maps = alignment.align_parties(ids, ACTIVE_PARTY_ID, cfg.rsa_bits,
                                               rng=cfg.crypto_seed)
    report["shared"] = len(shared)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for pid, ds in enumerate(sets, start=1):
        rows = [maps[pid][u] for u in shared]
        data.write_csv(_party_file(out, pid), ds.take(rows))
        alignment.write_alignment(out / f"rows_party{pid}.csv", shared, maps[pid])
    _write_json(out / "alignment.json", report)
    print(f"{len(shared)} shared ids; aligned files in {out}")
    if args.audit and report["audit"]["violations"]:
        raise ProtocolError("transcript audit found leaked ids")


# -- training -----------------------------------------------------------------

def _load_aligned(paths):
    sets = [data.read_csv(p, require_label=(i == 0)) for i, p in enumerate(paths)]
    for i, ds in enumerate(sets[1:], start=2):
        if ds.y is not None:
            raise ValidationError(f"party {i} file carries labels; only party 1 may")
        if ds.ids != sets[0].ids:
            raise ValidationError(f"party {i} rows are not aligned with party 1; run 'align'")
    return sets


def _staged_losses(model, leaves, y):
    return [metrics.log_loss(y, sigmoid(raw)) for raw in model.staged_raw(leaves)]


def _oracle_check(cfg, sets, train, model, lookups):
    X = np.hstack([ds.X[train] for ds in sets])
    first = list(range(sets[0].X.shape[1])) if cfg.mode == COMPLETELY_SECURE else None
    central = train_centralized(X, sets[0].y[train], cfg.params(), first_tree_columns=first)
    offsets = dict(zip(range(1, len(sets) + 1),
                       np.cumsum([0] + [ds.X.shape[1] for ds in sets[:-1]]).tolist()))
    for t, (ft, ct) in enumerate(zip(model.trees, central.trees)):
        feats, thrs = resolve_tree(ft, lookups, offsets)
        same = (ft.left == ct.left and ft.right == ct.right and feats == ct.feature
                and thrs == ct.threshold
                and np.allclose(ft.weight, ct.weight, rtol=0, atol=1e-9))
        if not same:
            return False, f"tree {t} differs from the centralized model"
    return True, f"{len(model.trees)} trees identical to the centralized model"


def _write_training_outputs(out, cfg, model, lookups, sets, train, test, train_leaves,
                            test_leaves, cost):
    y = sets[0].y
    save_model(model, out / "model.json")
    for pid, table in lookups.items():
        save_lookup(table, out / f"lookup_party{pid}.json")
    train_loss = _staged_losses(model, train_leaves, y[train])
    test_loss = _staged_losses(model, test_leaves, y[test]) if len(test) else []
    with open(out / "loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "train_loss", "test_loss"])
        for t, tr in enumerate(train_loss, start=1):
            writer.writerow([t, repr(tr), repr(test_loss[t - 1]) if test_loss else ""])
    doc = {"config": asdict(cfg),
           "train": metrics.summary(y[train], sigmoid(model.raw_from_leaves(train_leaves)))}
    if len(test):
        doc["test"] = metrics.summary(y[test], sigmoid(model.raw_from_leaves(test_leaves)))
    _write_json(out / "metrics.json", doc)
    _write_json(out / "split.json", {"train_ids": [sets[0].ids[i] for i in train],
                                     "test_ids": [sets[0].ids[i] for i in test]})
    if cost is not None:
        _write_json(out / "cost.json", cost)
    return doc


def cmd_train(args):
    cfg = _config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.party is not None:
        return _train_one_party(args, cfg, out)
    sets = _load_aligned(args.data)
    train, test = data.train_test_split(sets[0].n_rows, cfg.train_fraction, cfg.seed)
    parties = [PartyData(pid, ds.X[train], ds.feature_names, ds.y[train] if pid == 1 else None)
               for pid, ds in enumerate(sets, start=1)]
    with Federation(parties, cfg.params(), cfg.key_bits, cfg.mode, cfg.transport,
                    cfg.crypto_seed) as fed:
        model = fed.fit()
        test_leaves = fed.apply({pid: ds.X[test] for pid, ds in enumerate(sets, start=1)})
        train_leaves = fed.active.train_leaves
        cost = fed.cost_report()
        lookups = fed.lookups
    doc = _write_training_outputs(out, cfg, model, lookups, sets, train, test, train_leaves,
                                  test_leaves, cost)
    print(f"trained {len(model.trees)} trees ({cfg.mode}); "
          + ", ".join(f"{k} {v:.4f}" for k, v in doc.get("test", doc["train"]).items()
                      if k != "n"))
    if args.oracle_check:
        ok, detail = _oracle_check(cfg, sets, train, model, lookups)
        print(f"oracle check: {'PASS' if ok else 'FAIL'} ({detail})")
        if not ok:
            raise OracleMismatch(detail)


def _parse_peers(items):
    peers = {}
    for item in items or []:
        pid, _, address = item.partition("=")
        if not pid.isdigit() or not address:
            raise ValidationError(f"--peer expects PARTY=HOST:PORT, got {item!r}")
        peers[int(pid)] = address
    return peers


def _train_one_party(args, cfg, out):
    """One party of a multi-process socket session."""
    if args.oracle_check:
        raise ValidationError("--oracle-check needs every party's data in one process")
    if len(args.data) != 1:
        raise ValidationError("with --party, pass only this party's data file")
    ds = data.read_csv(args.data[0], require_label=(args.party == ACTIVE_PARTY_ID))
    train, test = data.train_test_split(ds.n_rows, cfg.train_fraction, cfg.seed)
    params = cfg.params()
    checksum = config_checksum(params, cfg.mode, cfg.key_bits)
    if args.party != ACTIVE_PARTY_ID:
        if not args.listen:
            raise ValidationError("a passive party needs --listen HOST:PORT")
        server = transport.listen(args.listen)
        try:
            channel = transport.accept(server, f"{args.party}-1")
        finally:
            server.close()
        party = PassiveParty(args.party, ds.X[train], channel, params, checksum,
                             ds.feature_names)
        party.load_queries(ds.X[test])
        try:
            party.serve()
        finally:
            channel.close()
        save_lookup(party.lookup, out / f"lookup_party{args.party}.json")
        print(f"party {args.party}: session complete, {len(party.lookup)} lookup records")
        return
    peers = _parse_peers(args.peer)
    if not peers:
        raise ValidationError("the active party needs at least one --peer PARTY=HOST:PORT")
    channels = {pid: transport.connect(addr, f"1-{pid}") for pid, addr in sorted(peers.items())}
    active = ActiveParty(ds.X[train], ds.y[train], channels, params, checksum, cfg.key_bits,
                         cfg.mode, cfg.crypto_seed, ds.feature_names)
    try:
        model = active.fit()
        test_leaves = active.apply(ds.X[test])
        active.end_session()
    except Exception as exc:
        active.abort(str(exc))
        raise
    finally:
        for ch in channels.values():
            ch.close()
    doc = _write_training_outputs(out, cfg, model, {ACTIVE_PARTY_ID: active.lookup}, [ds],
                                  train, test, active.train_leaves, test_leaves,
                                  cost_report(active))
    print(f"trained {len(model.trees)} trees; test auc {doc.get('test', doc['train'])['auc']:.4f}")


# -- predict / analyze / cost -------------------------------------------------

def _model_and_lookups(model_dir, n_parties):
    model_dir = Path(model_dir)
    model = load_model(model_dir / "model.json")
    lookups = {pid: load_lookup(model_dir / f"lookup_party{pid}.json")
               for pid in range(1, n_parties + 1)}
    return model, lookups


def _query_blocks(paths, lookups):
    sets = [data.read_csv(p) for p in paths]
    for pid, ds in enumerate(sets, start=1):
        if ds.ids != sets[0].ids:
            raise ValidationError(f"party {pid} query rows are not aligned with party 1")
        if ds.feature_names != lookups[pid].feature_names:
            raise ValidationError(f"party {pid} query columns differ from its training columns")
    return sets


def cmd_predict(args):
    model, lookups = _model_and_lookups(args.model_dir, len(args.data))
    sets = _query_blocks(args.data, lookups)
    leaves, _ = run_inference(model, lookups, {pid: ds.X for pid, ds in enumerate(sets, 1)},
                              args.transport)
    prob = sigmoid(model.raw_from_leaves(leaves))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "probability"])
        for uid, p in zip(sets[0].ids, prob):
            writer.writerow([uid, repr(float(p))])
    print(f"wrote {len(prob)} predictions to {args.out}")


def cmd_analyze(args):
    model, lookups = _model_and_lookups(args.model_dir, len(args.data))
    sets = _query_blocks(args.data, lookups)
    if sets[0].y is None:
        raise ValidationError("analysis needs the active party's labels")
    rows = np.arange(sets[0].n_rows)
    split_file = Path(args.model_dir) / "split.json"
    if args.rows == "train" and split_file.exists():
        wanted = set(json.loads(split_file.read_text())["train_ids"])
        rows = np.array([i for i, u in enumerate(sets[0].ids) if u in wanted], dtype=np.int64)
    leaves, _ = run_inference(model, lookups, {pid: ds.X[rows] for pid, ds in enumerate(sets, 1)})
    doc = security.analysis_report(model, leaves, sets[0].y[rows], min_leaf=args.min_leaf)
    out = args.out or str(Path(args.model_dir) / "analysis.json")
    _write_json(out, doc)
    trend = ", ".join("n/a" if p is None else f"{p:.4f}" for p in doc["purity_trend"][:5])
    print(f"mean leaf purity by tree: {trend}")
    if "residual_mask" in doc and doc["residual_mask"]["defined"]:
        rm = doc["residual_mask"]
        print(f"after tree 1: mu_n {rm['mu_n']:.4f}, mu_p {rm['mu_p']:.4f}, "
              f"separation {rm['separation']:.4f}, leafwise {rm['leafwise_separation']:.4f}")
    print(f"wrote {out}")


def cmd_cost(args):
    path = Path(args.model_dir) / "cost.json"
    doc = json.loads(path.read_text())
    if args.json:
        print(dumps(doc), end="")
        return
    print(f"key size {doc['key_bits']} bits, {doc['n_rows']} training rows")
    for pid, party in sorted(doc["parties"].items(), key=lambda kv: int(kv[0])):
        print(f"party {pid}: {party['n_features']} features, "
              f"{party['bytes_to_party']} bytes sent, {party['bytes_from_party']} bytes received")
        for phase, ph in party["phases"].items():
            print(f"  {phase:<11} frames {ph['frames']:>6}  ciphertexts {ph['ciphertexts']:>8}"
                  f"  bytes {ph['bytes']:>10}")
    s = doc["summary"]
    print(f"histogram nodes {s['histogram_nodes']}, max ciphertexts per node "
          f"{s['max_node_ciphertexts']}, within 2*l*d bound: {s['all_within_bucket_bound']}")


# -- entry point ----------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="secureboost", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled CSV")
    p.add_argument("--profile", default="credit2", choices=sorted(data.PROFILES))
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="split a labeled CSV vertically into party files")
    p.add_argument("source")
    p.add_argument("--parts", required=True,
                   help="column counts ('5,5') or column lists ('x0,x1;x2,x3')")
    p.add_argument("--overlap", type=float, default=1.0,
                   help="fraction of rows each party keeps (independent samples)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("align", help="private intersection of party ids")
    p.add_argument("--data", nargs="+", required=True, help="party files, active party first")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--audit", action="store_true", help="record and audit the transcript")
    _add_config_flags(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("train", help="federated training")
    p.add_argument("--data", nargs="+", required=True, help="aligned party files, active first")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--oracle-check", action="store_true",
                   help="also train centrally and require identical trees")
    p.add_argument("--party", type=int, help="run only this party (socket transport)")
    p.add_argument("--listen", help="passive party: address to accept the active party on")
    p.add_argument("--peer", action="append", help="active party: PARTY=HOST:PORT (repeat)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="federated inference with a trained model")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--data", nargs="+", required=True, help="aligned query files, active first")
    p.add_argument("--out", required=True)
    p.add_argument("--transport", choices=("inprocess", "socket"), default="inprocess")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("analyze", help="leaf purity and residual masking report")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--rows", choices=("train", "all"), default="train")
    p.add_argument("--min-leaf", type=int, default=50)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("cost", help="communication accounting of a training run")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_cost)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except OracleMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except ProtocolError as exc:
        print(f"protocol abort: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
