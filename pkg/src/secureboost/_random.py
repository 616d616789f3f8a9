"""Randomness for key generation and encryption nonces.

By default everything comes from the OS CSPRNG. Passing a seed switches to a
SHAKE-256 keystream so integration tests can replay a run exactly.
"""
import hashlib
import secrets


class RandomSource:
    def __init__(self, seed=None):
        self.seed = seed
        self._counter = 0
        self._sys = secrets.SystemRandom() if seed is None else None
        if seed is not None:
            self._key = hashlib.sha256(b"secureboost-rng:" + str(seed).encode()).digest()

    def _stream(self, nbytes):
        self._counter += 1
        block = self._key + self._counter.to_bytes(8, "big")
        return hashlib.shake_256(block).digest(nbytes)

    def randbits(self, k):
        if k <= 0:
            return 0
        if self._sys is not None:
            return self._sys.getrandbits(k)
        nbytes = (k + 7) // 8
        return int.from_bytes(self._stream(nbytes), "big") >> (8 * nbytes - k)

    def randbelow(self, n):
        """Uniform integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError("upper bound must be positive")
        k = n.bit_length()
        while True:
            r = self.randbits(k)
            if r < n:
                return r

    def spawn(self, label):
        """Independent child stream; keeps replay deterministic per consumer."""
        if self.seed is None:
            return RandomSource()
        return RandomSource(f"{self.seed}/{label}")


def as_random_source(rng):
    if isinstance(rng, RandomSource):
        return rng
    return RandomSource(rng)
