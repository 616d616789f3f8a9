"""Private entity alignment with RSA blind signatures.

Party B (the signer) holds an RSA key. Party A blinds the hash of each of its
ids, B signs the blinded values and also publishes outer hashes of signatures
over its own ids. A unblinds, hashes, intersects, and sends the matching
digests back so both sides learn the shared ids and nothing else.

Both endpoints are plain state machines: ``handle(message)`` returns the
messages to send next. :func:`align` drives a pair of them over an in-process
channel.
"""
import csv
import hashlib
import random
from dataclasses import dataclass, field
from typing import Optional

import gmpy2

from ._random import RandomSource
from .errors import ConfigurationError, ProtocolError, ValidationError
from .federation import messages, transport
from .federation.messages import Tag

DEFAULT_RSA_BITS = 1024
MIN_RSA_BITS = 512
PUBLIC_EXPONENT = 65537


@dataclass(frozen=True)
class RsaAlignmentKey:
    n: int
    e: int
    d: int
    p: int
    q: int

    @classmethod
    def generate(cls, bits=DEFAULT_RSA_BITS, rng=None):
        if bits < MIN_RSA_BITS or bits % 2:
            raise ConfigurationError(f"RSA modulus must be an even size >= {MIN_RSA_BITS} bits")
        rng = rng or RandomSource()
        half = bits // 2
        for _ in range(64):
            p = int(gmpy2.next_prime(rng.randbits(half) | (3 << (half - 2)) | 1))
            q = int(gmpy2.next_prime(rng.randbits(half) | (3 << (half - 2)) | 1))
            if p == q or (p * q).bit_length() != bits:
                continue
            if gmpy2.gcd(PUBLIC_EXPONENT, (p - 1) * (q - 1)) != 1:
                continue
            d = int(gmpy2.invert(PUBLIC_EXPONENT, gmpy2.lcm(p - 1, q - 1)))
            return cls(p * q, PUBLIC_EXPONENT, d, p, q)
        raise ConfigurationError(f"could not generate a {bits}-bit RSA key")

    def sign(self, m):
        """m^d mod n via the CRT."""
        p, q = self.p, self.q
        sp = gmpy2.powmod(m, self.d % (p - 1), p)
        sq = gmpy2.powmod(m, self.d % (q - 1), q)
        h = gmpy2.invert(q, p) * (sp - sq) % p
        return int(sq + h * q)


def hash_to_group(entity_id, n):
    """Full-domain hash of an id into Z_n."""
    size = (n.bit_length() + 7) // 8 + 16
    digest = hashlib.shake_256(b"secureboost-align:" + entity_id.encode("utf-8")).digest(size)
    return int.from_bytes(digest, "big") % n


def outer_hash(value, n):
    return hashlib.sha256(int(value).to_bytes((n.bit_length() + 7) // 8, "big")).digest()


def _check_ids(ids, who):
    ids = list(ids)
    if any(not isinstance(u, str) or not u for u in ids):
        raise ValidationError(f"party {who}: ids must be non-empty strings")
    if len(set(ids)) != len(ids):
        raise ValidationError(f"party {who}: duplicate ids")
    return ids


class AlignmentRequester:
    """Party A: blinds its ids, learns the intersection first."""

    def __init__(self, ids, rng=None, blind=True, leak_raw_ids=False, session=0):
        self.ids = _check_ids(ids, "A")
        self.rng = rng or RandomSource()
        self.blind = blind
        self.leak_raw_ids = leak_raw_ids
        self.session = session
        self.state = "await_key"
        self.shared_ids = None
        self._n = self._e = None
        self._r = []

    def handle(self, msg):
        if msg.tag == Tag.ALIGN_PUBKEY and self.state == "await_key":
            return self._on_key(msg)
        if msg.tag == Tag.ALIGN_SIGNED and self.state == "await_signed":
            return self._on_signed(msg)
        raise ProtocolError(f"requester cannot handle {msg.tag.name} in state {self.state}")

    def _on_key(self, msg):
        n, e = msg["n"], msg["e"]
        if n.bit_length() < MIN_RSA_BITS:
            raise ProtocolError("signer key is too small")
        self._n, self._e = n, e
        blinded = []
        for u in self.ids:
            r = 1
            if self.blind:
                while True:
                    r = self.rng.randbelow(n)
                    if r > 1 and gmpy2.gcd(r, n) == 1:
                        break
            self._r.append(r)
            blinded.append(int(gmpy2.powmod(r, e, n) * hash_to_group(u, n) % n))
        if self.leak_raw_ids:
            blinded.extend(int.from_bytes(u.encode("utf-8"), "big") for u in self.ids)
        self.state = "await_signed"
        return [messages.make(Tag.ALIGN_BLINDED, self.session, values=blinded)]

    def _on_signed(self, msg):
        n = self._n
        signed = msg["signed"]
        if len(signed) != len(self.ids) + (len(self.ids) if self.leak_raw_ids else 0):
            raise ProtocolError("signer returned the wrong number of signatures")
        mine = {}
        for u, z, r in zip(self.ids, signed, self._r):
            sig = z * gmpy2.invert(r, n) % n
            mine[outer_hash(sig, n)] = u
        theirs = set(msg["digests"])
        common = sorted(dgst for dgst in mine if dgst in theirs)
        self.shared_ids = sorted(mine[dgst] for dgst in common)
        self.state = "done"
        return [messages.make(Tag.ALIGN_INTERSECTION, self.session, digests=common)]


class AlignmentSigner:
    """Party B: owns the RSA key, signs blinded values."""

    def __init__(self, ids, key_bits=DEFAULT_RSA_BITS, rng=None, session=0):
        self.ids = _check_ids(ids, "B")
        self.key_bits = key_bits
        self.rng = rng or RandomSource()
        self.session = session
        self.state = "init"
        self.shared_ids = None
        self.key = None
        self._by_digest = {}

    def start(self):
        self.key = RsaAlignmentKey.generate(self.key_bits, self.rng)
        self.state = "await_blinded"
        return [messages.make(Tag.ALIGN_PUBKEY, self.session, n=self.key.n, e=self.key.e)]

    def handle(self, msg):
        if msg.tag == Tag.ALIGN_BLINDED and self.state == "await_blinded":
            return self._on_blinded(msg)
        if msg.tag == Tag.ALIGN_INTERSECTION and self.state == "await_intersection":
            return self._on_intersection(msg)
        raise ProtocolError(f"signer cannot handle {msg.tag.name} in state {self.state}")

    def _on_blinded(self, msg):
        n = self.key.n
        signed = [self.key.sign(y % n) for y in msg["values"]]
        for u in self.ids:
            self._by_digest[outer_hash(self.key.sign(hash_to_group(u, n)), n)] = u
        # sorted digests carry no information about B's row order
        digests = sorted(self._by_digest)
        self.state = "await_intersection"
        return [messages.make(Tag.ALIGN_SIGNED, self.session, signed=signed, digests=digests)]

    def _on_intersection(self, msg):
        unknown = [dgst for dgst in msg["digests"] if dgst not in self._by_digest]
        if unknown:
            raise ProtocolError("intersection contains digests the signer never issued")
        self.shared_ids = sorted(self._by_digest[dgst] for dgst in msg["digests"])
        self.state = "done"
        return []


@dataclass
class AlignmentResult:
    shared_ids: list
    row_index_map: dict
    transcript: Optional[list] = None
    views: dict = field(default_factory=dict)
    bytes_exchanged: int = 0

    def rows(self, party):
        """Local row indices of the shared ids, in canonical order."""
        mapping = self.row_index_map[party]
        return [mapping[u] for u in self.shared_ids]


def _row_map(ids, shared):
    position = {u: i for i, u in enumerate(ids)}
    return {u: position[u] for u in shared}


def align(party_a_ids, party_b_ids, key_bits=DEFAULT_RSA_BITS, rng=None, record=False,
          blind=True, leak_raw_ids=False):
    """Run the two-party protocol and return both parties' views.

    ``blind`` and ``leak_raw_ids`` exist only to build negative controls for
    :func:`transcript_audit`.
    """
    rng = rng if isinstance(rng, RandomSource) else RandomSource(rng)
    session = rng.randbits(63)
    requester = AlignmentRequester(party_a_ids, rng.spawn("A"), blind, leak_raw_ids, session)
    signer = AlignmentSigner(party_b_ids, key_bits, rng.spawn("B"), session)
    a_end, b_end = transport.channel_pair("align", record)

    def deliver(outgoing, src, dst, endpoint):
        replies = []
        for msg in outgoing:
            src.send(msg)
            replies.extend(endpoint.handle(dst.recv()))
        return replies

    pending = deliver(signer.start(), b_end, a_end, requester)  # key -> blinded
    pending = deliver(pending, a_end, b_end, signer)             # blinded -> signed
    pending = deliver(pending, b_end, a_end, requester)          # signed -> intersection
    pending = deliver(pending, a_end, b_end, signer)
    if pending or requester.state != "done" or signer.state != "done":
        raise ProtocolError("alignment did not complete")
    if requester.shared_ids != signer.shared_ids:
        raise ProtocolError("parties disagree on the intersection")
    shared = requester.shared_ids
    transcript = None
    if record:
        transcript = [("A->B", f) for d, f in a_end.transcript if d == "sent"]
        transcript += [("B->A", f) for d, f in b_end.transcript if d == "sent"]
    return AlignmentResult(
        shared_ids=shared,
        row_index_map={"A": _row_map(requester.ids, shared), "B": _row_map(signer.ids, shared)},
        transcript=transcript,
        views={"A": list(requester.shared_ids), "B": list(signer.shared_ids)},
        bytes_exchanged=a_end.bytes_sent + b_end.bytes_sent,
    )


def align_parties(ids_by_party, active_party=1, key_bits=DEFAULT_RSA_BITS, rng=None):
    """Align more than two parties: pairwise with the active party, then intersect.

    Returns ``(shared_ids, {party: {id: row}})``. The active party broadcasts the
    final shared set, so every party ends with the same canonical order.
    """
    rng = rng if isinstance(rng, RandomSource) else RandomSource(rng)
    active_ids = _check_ids(ids_by_party[active_party], active_party)
    shared = set(active_ids)
    for pid in sorted(ids_by_party):
        if pid == active_party:
            continue
        result = align(active_ids, ids_by_party[pid], key_bits, rng.spawn(f"pair-{pid}"))
        shared &= set(result.shared_ids)
    shared = sorted(shared)
    maps = {pid: _row_map(list(ids), shared) for pid, ids in ids_by_party.items()}
    return shared, maps


@dataclass
class AuditReport:
    frames: int
    violations: list

    @property
    def ok(self):
        return not self.violations


def _find_patterns(payload, patterns):
    """Yield every pattern occurring in ``payload`` (single sliding pass)."""
    if not patterns:
        return set()
    plen = min(8, min(len(p) for p in patterns))
    index = {}
    for pat in patterns:
        index.setdefault(pat[:plen], []).append(pat)
    found = set()
    for i in range(len(payload) - plen + 1):
        cands = index.get(payload[i:i + plen])
        if cands:
            for pat in cands:
                if payload.startswith(pat, i):
                    found.add(pat)
    return found


def transcript_audit(transcript, party_a_ids, party_b_ids):
    """Check that no non-shared id leaks through an alignment transcript.

    A leak is either the raw UTF-8 id or its unblinded hash-to-group value
    (which anyone holding the public modulus can recompute for a guessed id).
    """
    a, b = set(party_a_ids), set(party_b_ids)
    private = sorted((a | b) - (a & b))
    frames = [(direction, messages.decode(frame)) for direction, frame in transcript]
    n = next((m["n"] for _, m in frames if m.tag == Tag.ALIGN_PUBKEY), None)
    patterns = {}
    for u in private:
        patterns[u.encode("utf-8")] = (u, "raw id")
        if n is not None:
            hv = hash_to_group(u, n)
            patterns[hv.to_bytes(max(1, (hv.bit_length() + 7) // 8), "big")] = (u, "unblinded hash")
    violations = []
    for i, (direction, frame) in enumerate(transcript):
        payload = frame[messages.HEADER_SIZE:]
        for pat in sorted(_find_patterns(payload, list(patterns))):
            u, kind = patterns[pat]
            violations.append({"frame": i, "direction": direction, "id": u, "kind": kind})
    return AuditReport(len(transcript), violations)


def read_ids(path):
    """Ids from a one-column CSV with header ``id``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "id" not in reader.fieldnames:
            raise ValidationError(f"{path}: missing 'id' column")
        return [row["id"] for row in reader]


def write_alignment(path, shared_ids, row_map):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "row"])
        for u in shared_ids:
            writer.writerow([u, row_map[u]])


def random_ids(count, rng, prefix="u"):
    """Distinct opaque ids, handy for tests and demos."""
    rnd = random.Random(rng)
    return [f"{prefix}{v:012x}" for v in rnd.sample(range(16 ** 12), count)]
