"""Paillier cryptosystem (g = n + 1 variant) with a signed fixed-point codec.

Gradients and hessians are real numbers; the codec maps them onto Z_n so
that ciphertext addition corresponds to addition of the reals::

    pk, sk = keygen(256)
    codec = FixedPointCodec(pk.n)
    c = pk.encrypt(codec.encode(-0.25)) + pk.encrypt(codec.encode(1.0))
    codec.decode(sk.decrypt(c))  # 0.75
"""
import hashlib
import math
import struct

import gmpy2

from ._random import RandomSource
from .errors import ConfigurationError, DomainError, KeyMismatchError

DEFAULT_KEY_BITS = 512
DEFAULT_SCALE_BITS = 40
_PRIME_RETRIES = 64

_default_rng = RandomSource()


def _random_prime(bits, rng):
    # top two bits set so that p*q has exactly 2*bits bits
    for _ in range(_PRIME_RETRIES):
        candidate = rng.randbits(bits) | (3 << (bits - 2)) | 1
        p = gmpy2.next_prime(candidate)
        if p.bit_length() == bits:
            return p
    raise ConfigurationError(f"could not generate a {bits}-bit prime")


class PaillierPublicKey:
    """Public half: modulus n, generator g = n + 1, cached n^2."""

    def __init__(self, n):
        self.n = gmpy2.mpz(n)
        self.g = self.n + 1
        self.n_squared = self.n * self.n
        self.bits = self.n.bit_length()
        self.fingerprint = hashlib.sha256(self.to_bytes()).hexdigest()[:16]

    def __eq__(self, other):
        return isinstance(other, PaillierPublicKey) and self.n == other.n

    def __hash__(self):
        return hash(int(self.n))

    def __repr__(self):
        return f"<PaillierPublicKey {self.bits} bits {self.fingerprint}>"

    def encrypt(self, m, rng=None):
        """Encrypt an integer plaintext in [0, n)."""
        if not 0 <= m < self.n:
            raise DomainError("plaintext must lie in [0, n)")
        rng = rng or _default_rng
        while True:
            r = rng.randbelow(int(self.n))
            if r > 0 and gmpy2.gcd(r, self.n) == 1:
                break
        # (n+1)^m = 1 + m*n  (mod n^2)
        gm = (1 + gmpy2.mpz(m) * self.n) % self.n_squared
        value = gm * gmpy2.powmod(r, self.n, self.n_squared) % self.n_squared
        return Ciphertext(value, self)

    def ciphertext_from_bytes(self, data):
        """Inverse of :meth:`Ciphertext.to_bytes` (length prefix included)."""
        c, _ = Ciphertext.read(data, 0, self)
        return c

    def to_bytes(self):
        n = int(self.n)
        return struct.pack(">I", self.bits) + n.to_bytes((self.bits + 7) // 8, "big")

    @classmethod
    def from_bytes(cls, data):
        key, _ = cls.read(data, 0)
        return key

    @classmethod
    def read(cls, data, offset):
        (bits,) = struct.unpack_from(">I", data, offset)
        offset += 4
        size = (bits + 7) // 8
        n = int.from_bytes(data[offset:offset + size], "big")
        return cls(n), offset + size


class PaillierPrivateKey:
    """Private half. Decryption uses the usual mod p^2 / mod q^2 split."""

    def __init__(self, public_key, p, q):
        p, q = gmpy2.mpz(p), gmpy2.mpz(q)
        if p == q:
            raise ConfigurationError("p and q must differ")
        if p * q != public_key.n:
            raise ConfigurationError("p*q does not match the public modulus")
        self.public_key = public_key
        self.p, self.q = p, q
        self.lam = gmpy2.lcm(p - 1, q - 1)
        self.mu = gmpy2.invert(self.lam, public_key.n)
        self._p2, self._q2 = p * p, q * q
        self._hp = gmpy2.invert(self._l(gmpy2.powmod(public_key.g, p - 1, self._p2), p), p)
        self._hq = gmpy2.invert(self._l(gmpy2.powmod(public_key.g, q - 1, self._q2), q), q)
        self._q_inv = gmpy2.invert(q, p)

    @staticmethod
    def _l(x, m):
        return (x - 1) // m

    def __repr__(self):
        return f"<PaillierPrivateKey for {self.public_key.fingerprint}>"

    def decrypt(self, c):
        if not isinstance(c, Ciphertext):
            raise TypeError("expected a Ciphertext")
        if c.public_key.fingerprint != self.public_key.fingerprint:
            raise KeyMismatchError("ciphertext was produced under a different key")
        mp = self._l(gmpy2.powmod(c.value, self.p - 1, self._p2), self.p) * self._hp % self.p
        mq = self._l(gmpy2.powmod(c.value, self.q - 1, self._q2), self.q) * self._hq % self.q
        # CRT recombination
        u = (mp - mq) * self._q_inv % self.p
        return int(mq + u * self.q)


class Ciphertext:
    """An element of Z_{n^2}; ``+`` is homomorphic addition."""

    __slots__ = ("value", "public_key")

    def __init__(self, value, public_key):
        value = gmpy2.mpz(value)
        if not 0 <= value < public_key.n_squared:
            raise DomainError("ciphertext value outside Z_{n^2}")
        self.value = value
        self.public_key = public_key

    @property
    def key_fingerprint(self):
        return self.public_key.fingerprint

    def __add__(self, other):
        if not isinstance(other, Ciphertext):
            return NotImplemented
        if other.public_key.fingerprint != self.public_key.fingerprint:
            raise KeyMismatchError("cannot add ciphertexts under different keys")
        n2 = self.public_key.n_squared
        return Ciphertext(self.value * other.value % n2, self.public_key)

    def __radd__(self, other):
        # lets builtin sum() start from 0
        if other == 0:
            return self
        return NotImplemented

    def __eq__(self, other):
        return (isinstance(other, Ciphertext) and self.value == other.value
                and self.key_fingerprint == other.key_fingerprint)

    def __hash__(self):
        return hash((int(self.value), self.key_fingerprint))

    def __repr__(self):
        return f"<Ciphertext {self.key_fingerprint} {int(self.value) & 0xffffffff:08x}...>"

    def to_bytes(self):
        v = int(self.value)
        body = v.to_bytes(max(1, (v.bit_length() + 7) // 8), "big")
        return struct.pack(">I", len(body)) + body

    @classmethod
    def read(cls, data, offset, public_key):
        (size,) = struct.unpack_from(">I", data, offset)
        offset += 4
        value = int.from_bytes(data[offset:offset + size], "big")
        return cls(value, public_key), offset + size


def keygen(bits=DEFAULT_KEY_BITS, rng=None):
    """Generate a Paillier key pair whose modulus has exactly ``bits`` bits."""
    if bits < 256 or bits % 2:
        raise ConfigurationError(f"key size must be an even number >= 256, got {bits}")
    rng = rng or RandomSource()
    half = bits // 2
    for _ in range(_PRIME_RETRIES):
        p = _random_prime(half, rng)
        q = _random_prime(half, rng)
        if p != q and (p * q).bit_length() == bits:
            pk = PaillierPublicKey(p * q)
            return pk, PaillierPrivateKey(pk, p, q)
    raise ConfigurationError(f"key generation failed for {bits} bits")


class FixedPointCodec:
    """Signed fixed-point embedding of reals into Z_n.

    ``encode(x) = round(x * 2**scale_bits) mod n``; residues in the upper half
    of Z_n stand for negative numbers.
    """

    def __init__(self, n, scale_bits=DEFAULT_SCALE_BITS):
        self.n = int(n)
        self.scale_bits = scale_bits
        self.scale = 1 << scale_bits
        self._half = self.n // 2
        self.max_magnitude = self._half / self.scale

    def check_capacity(self, n_terms, bound=1.0):
        """Raise unless a sum of ``n_terms`` values with |x| <= bound cannot wrap."""
        if n_terms * bound * self.scale > self._half:
            raise ConfigurationError(
                f"{n_terms} terms of magnitude {bound} overflow a "
                f"{self.n.bit_length()}-bit modulus at scale 2^{self.scale_bits}")

    def quantize(self, x):
        """Snap to the codec grid; what ``decode(encode(x))`` returns."""
        return round(x * self.scale) / self.scale

    def encode(self, x):
        if not math.isfinite(x) or abs(x) > self.max_magnitude:
            raise DomainError(f"{x!r} exceeds the codec range")
        return round(x * self.scale) % self.n

    def decode(self, m):
        m = int(m) % self.n
        if 2 * m >= self.n:
            m -= self.n
        return m / self.scale


def encode_real(codec, x):
    return codec.encode(x)


def decode_real(codec, m):
    return codec.decode(m)
