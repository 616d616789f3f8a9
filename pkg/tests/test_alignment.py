import random

import pytest
from hypothesis import given, settings, strategies as st

from secureboost._random import RandomSource
from secureboost.alignment import (RsaAlignmentKey, align, align_parties, hash_to_group, read_ids,
                                   random_ids, transcript_audit, write_alignment)
from secureboost.errors import ConfigurationError, ValidationError
from secureboost.federation import messages as m
from secureboost.federation.messages import Tag

BITS = 512


def test_small_intersection():
    res = align(["u1", "u2", "u3"], ["u2", "u3", "u4"], BITS, rng=1)
    assert res.shared_ids == ["u2", "u3"]
    assert res.rows("A") == [1, 2] and res.rows("B") == [0, 1]
    assert res.views["A"] == res.views["B"] == res.shared_ids


def test_identical_and_disjoint_sets():
    ids = [f"user-{i}" for i in range(20)]
    assert align(ids, list(reversed(ids)), BITS, rng=2).shared_ids == sorted(ids)
    assert align(ids[:10], ids[10:], BITS, rng=3).shared_ids == []


def test_empty_side():
    assert align([], ["x"], BITS, rng=4).shared_ids == []


def test_thousand_ids_with_known_overlap():
    ids = random_ids(1800, 7)
    a, b = ids[:1000], ids[800:]
    random.Random(1).shuffle(b)
    res = align(a, b, BITS, rng=5, record=True)
    assert res.shared_ids == sorted(set(a) & set(b)) and len(res.shared_ids) == 200
    assert [b[i] for i in res.rows("B")] == [a[i] for i in res.rows("A")] == res.shared_ids
    assert transcript_audit(res.transcript, a, b).ok


@settings(max_examples=25, deadline=None)
@given(st.sets(st.text(min_size=1, max_size=6), max_size=25),
       st.sets(st.text(min_size=1, max_size=6), max_size=25), st.integers(0, 2**32))
def test_matches_set_intersection(a, b, seed):
    res = align(sorted(a), sorted(b, reverse=True), BITS, rng=seed)
    assert res.shared_ids == sorted(a & b)


@pytest.mark.parametrize("a,b", [(["x", "x"], ["y"]), (["x"], ["y", "y"]), ([""], ["y"])])
def test_bad_ids_are_rejected(a, b):
    with pytest.raises(ValidationError):
        align(a, b, BITS, rng=0)


def test_key_size_limits():
    with pytest.raises(ConfigurationError):
        RsaAlignmentKey.generate(256, RandomSource(0))
    with pytest.raises(ConfigurationError):
        RsaAlignmentKey.generate(513, RandomSource(0))


def test_crt_signature_verifies():
    key = RsaAlignmentKey.generate(BITS, RandomSource("sig"))
    assert key.n.bit_length() == BITS
    rnd = random.Random(0)
    for _ in range(50):
        msg = rnd.randrange(key.n)
        assert pow(key.sign(msg), key.e, key.n) == msg == pow(msg, key.d * key.e, key.n)


def test_hash_to_group_is_deterministic_and_in_range():
    key = RsaAlignmentKey.generate(BITS, RandomSource("h"))
    values = {hash_to_group(f"id{i}", key.n) for i in range(200)}
    assert len(values) == 200 and all(0 <= v < key.n for v in values)
    assert hash_to_group("id1", key.n) == hash_to_group("id1", key.n)


def _blinded(res):
    return next(msg["values"] for msg in (m.decode(f) for _, f in res.transcript)
                if msg.tag == Tag.ALIGN_BLINDED)


def test_blinding_is_fresh_each_run():
    ids = ["a", "b", "c"]
    first = align(ids, ids, BITS, rng=10, record=True)
    second = align(ids, ids, BITS, rng=11, record=True)
    assert set(_blinded(first)).isdisjoint(_blinded(second))
    frames = [m.decode(f) for _, f in first.transcript]
    n = next(msg["n"] for msg in frames if msg.tag == Tag.ALIGN_PUBKEY)
    assert not {hash_to_group(u, n) for u in ids} & set(_blinded(first))


def test_audit_flags_unblinded_hashes_and_raw_ids():
    a, b = ["u1", "u2", "secret-a"], ["u1", "u2", "secret-b"]
    honest = align(a, b, BITS, rng=12, record=True)
    assert transcript_audit(honest.transcript, a, b).ok
    unblinded = transcript_audit(align(a, b, BITS, rng=12, record=True, blind=False).transcript, a, b)
    assert {(v["id"], v["kind"]) for v in unblinded.violations} == {("secret-a", "unblinded hash")}
    leaky = transcript_audit(align(a, b, BITS, rng=12, record=True, leak_raw_ids=True).transcript,
                             a, b)
    assert ("secret-a", "raw id") in {(v["id"], v["kind"]) for v in leaky.violations}
    assert all(v["direction"] == "A->B" for v in leaky.violations)


def test_audit_with_nothing_private():
    res = align(["a", "b"], ["b", "a"], BITS, rng=13, record=True)
    report = transcript_audit(res.transcript, ["a", "b"], ["b", "a"])
    assert report.ok and report.frames == 4


def test_multi_party_alignment():
    ids = {1: ["a", "b", "c", "d"], 2: ["d", "c", "b"], 3: ["b", "d", "z"]}
    shared, maps = align_parties(ids, key_bits=BITS, rng=14)
    assert shared == ["b", "d"]
    for pid, rows in maps.items():
        assert [ids[pid][rows[u]] for u in shared] == shared


def test_id_file_roundtrip(tmp_path):
    path = tmp_path / "ids.csv"
    path.write_text("id\nu1\nu2\n")
    assert read_ids(path) == ["u1", "u2"]
    (tmp_path / "bad.csv").write_text("name\nu1\n")
    with pytest.raises(ValidationError):
        read_ids(tmp_path / "bad.csv")
    write_alignment(tmp_path / "out.csv", ["u2"], {"u2": 1})
    assert (tmp_path / "out.csv").read_text().splitlines() == ["id,row", "u2,1"]
