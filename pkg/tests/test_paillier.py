import random

import pytest
from hypothesis import given, settings, strategies as st

from secureboost._random import RandomSource
from secureboost.errors import ConfigurationError, DomainError, KeyMismatchError
from secureboost.paillier import (Ciphertext, FixedPointCodec, PaillierPublicKey, decode_real,
                                  encode_real, keygen)


@pytest.mark.parametrize("bits", [256, 512])
def test_keygen_size_generator_and_roundtrip(bits):
    pk, sk = keygen(bits, RandomSource(f"kg{bits}"))
    assert pk.n.bit_length() == bits
    assert pk.g == pk.n + 1
    assert sk.p != sk.q and sk.p * sk.q == pk.n
    rnd = random.Random(bits)
    nonces = RandomSource("nonces")
    for _ in range(1000):
        m = rnd.randrange(pk.n)
        assert sk.decrypt(pk.encrypt(m, nonces)) == m


@pytest.mark.parametrize("bits", [255, 128, 0])
def test_keygen_rejects_bad_sizes(bits):
    with pytest.raises(ConfigurationError):
        keygen(bits)


def test_encrypt_zero_and_boundaries(keys256):
    pk, sk = keys256
    for m in (0, 1, pk.n - 1):
        assert sk.decrypt(pk.encrypt(m)) == m


def test_encryption_is_randomized(keys256):
    pk, _ = keys256
    assert pk.encrypt(5).value != pk.encrypt(5).value
    values = {pk.encrypt(7).value for _ in range(50)}
    assert len(values) == 50


@pytest.mark.parametrize("m", [-1, "n", "n+1"])
def test_encrypt_out_of_range(keys256, m):
    pk, _ = keys256
    m = {"n": pk.n, "n+1": pk.n + 1}.get(m, m)
    with pytest.raises(DomainError):
        pk.encrypt(m)


def test_add_two_and_three(keys256):
    pk, sk = keys256
    assert sk.decrypt(pk.encrypt(2) + pk.encrypt(3)) == 5


def test_additive_identity_and_wraparound(keys256):
    pk, sk = keys256
    assert sk.decrypt(pk.encrypt(0) + pk.encrypt(123456)) == 123456
    assert sk.decrypt(pk.encrypt(pk.n - 1) + pk.encrypt(2)) == 1
    # sum() starts from the integer 0
    assert sk.decrypt(sum(pk.encrypt(i) for i in range(10))) == 45


def test_bucket_fold_equals_plain_sum(keys256):
    pk, sk = keys256
    values = [random.Random(3).randrange(1 << 60) for _ in range(40)]
    total = pk.encrypt(0)
    for v in values:
        total = total + pk.encrypt(v)
    assert sk.decrypt(total) == sum(values) % pk.n


def test_key_mismatch(keys256, keys512):
    pk1, sk1 = keys256
    pk2, sk2 = keys512
    c1, c2 = pk1.encrypt(1), pk2.encrypt(1)
    assert c1.key_fingerprint != c2.key_fingerprint
    with pytest.raises(KeyMismatchError):
        c1 + c2
    with pytest.raises(KeyMismatchError):
        sk2.decrypt(c1)


def test_ciphertext_value_range(keys256):
    pk, _ = keys256
    with pytest.raises(DomainError):
        Ciphertext(pk.n_squared, pk)


def test_public_key_serialization(keys256):
    pk, _ = keys256
    data = pk.to_bytes()
    assert int.from_bytes(data[:4], "big") == 256
    assert PaillierPublicKey.from_bytes(data) == pk
    assert PaillierPublicKey.from_bytes(data).fingerprint == pk.fingerprint


def test_chain_of_thousand_small_values(keys256):
    pk, sk = keys256
    codec = FixedPointCodec(pk.n, 40)
    total = pk.encrypt(codec.encode(0.001))
    for _ in range(999):
        total = total + pk.encrypt(codec.encode(0.001))
    assert abs(codec.decode(sk.decrypt(total)) - 1.0) <= 1000 * 2.0 ** -40


def test_codec_exact_values(keys256):
    pk, _ = keys256
    codec = FixedPointCodec(pk.n, 40)
    assert codec.encode(0.0) == 0 and codec.decode(0) == 0.0
    assert codec.encode(-0.5) == pk.n - (1 << 39)
    assert codec.decode(codec.encode(-0.5)) == -0.5
    assert encode_real(codec, 0.25) == 1 << 38
    assert decode_real(codec, 1 << 38) == 0.25


def test_codec_sign_boundary(keys256):
    pk, _ = keys256
    codec = FixedPointCodec(pk.n, 40)
    half = pk.n // 2
    # n is odd, so values below (n+1)/2 are positive and the rest negative
    assert codec.decode(half) > 0
    assert codec.decode(half + 1) < 0
    assert codec.max_magnitude == half / 2.0 ** 40


def test_codec_random_roundtrip(keys256):
    pk, _ = keys256
    codec = FixedPointCodec(pk.n, 40)
    rnd = random.Random(7)
    for _ in range(10_000):
        x = rnd.uniform(-1, 1)
        assert abs(codec.decode(codec.encode(x)) - x) <= 2.0 ** -40


def test_codec_overflow_and_capacity(keys256):
    pk, _ = keys256
    codec = FixedPointCodec(pk.n, 40)
    with pytest.raises(DomainError):
        codec.encode(codec.max_magnitude * 2)
    codec.check_capacity(10**6, bound=1.0)
    with pytest.raises(ConfigurationError):
        codec.check_capacity(2 ** 250, bound=1.0)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_homomorphism_property(keys256, data):
    pk, sk = keys256
    a = data.draw(st.integers(0, pk.n - 1))
    b = data.draw(st.integers(0, pk.n - 1))
    assert sk.decrypt(pk.encrypt(a) + pk.encrypt(b)) == (a + b) % pk.n


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=60))
def test_signed_sum_property(keys256, xs):
    pk, sk = keys256
    codec = FixedPointCodec(pk.n, 40)
    total = sum(pk.encrypt(codec.encode(x)) for x in xs)
    assert abs(codec.decode(sk.decrypt(total)) - sum(xs)) <= len(xs) * 2.0 ** -40 + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0))
def test_ciphertext_bytes_roundtrip(keys256, m):
    pk, _ = keys256
    c = pk.encrypt(m % pk.n)
    data = c.to_bytes()
    assert int.from_bytes(data[:4], "big") == len(data) - 4
    back, offset = Ciphertext.read(data, 0, pk)
    assert offset == len(data) and back == c
    assert pk.ciphertext_from_bytes(data) == c
