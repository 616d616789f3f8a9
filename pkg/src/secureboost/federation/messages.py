"""Binary wire format for party-to-party messages.

Frame layout (all integers big-endian)::

    u32 frame length (bytes after this field)
    u8  tag
    u64 session id
    ... payload, layout depends on tag

Ciphertexts are length-prefixed minimal big-endian integers. Row sets travel
as bitsets: u32 bit count followed by ceil(bits/8) bytes, little-endian bit
order within each byte.
"""
import enum
import struct
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import ProtocolError
from ..paillier import Ciphertext, PaillierPublicKey

FRAME_HEADER = struct.Struct(">IBQ")
HEADER_SIZE = FRAME_HEADER.size  # 13


class Tag(enum.IntEnum):
    HELLO = 1
    HELLO_ACK = 2
    PUBLIC_KEY = 3
    TREE_START = 4
    GRADIENTS = 5
    HIST_REQUEST = 6
    HISTOGRAMS = 7
    SPLIT_ANNOUNCE = 8
    SPLIT_RESULT = 9
    INFER_QUERY = 10
    INFER_DIRECTION = 11
    LEAF_ARRIVAL = 12
    SESSION_END = 13
    ABORT = 14
    ALIGN_PUBKEY = 20
    ALIGN_BLINDED = 21
    ALIGN_SIGNED = 22
    ALIGN_INTERSECTION = 23


@dataclass
class Message:
    tag: Tag
    session: int = 0
    fields: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.fields[key]

    def __eq__(self, other):
        if not isinstance(other, Message):
            return NotImplemented
        if self.tag != other.tag or self.session != other.session:
            return False
        if self.fields.keys() != other.fields.keys():
            return False
        return all(_field_eq(self.fields[k], other.fields[k]) for k in self.fields)


def _field_eq(a, b):
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(np.asarray(a), np.asarray(b))
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(_field_eq(x, y) for x, y in zip(a, b))
    return a == b


class _Writer:
    def __init__(self):
        self.parts = []

    def u8(self, v):
        self.parts.append(struct.pack(">B", v))

    def u32(self, v):
        self.parts.append(struct.pack(">I", v))

    def u32s(self, values):
        values = list(values)
        self.u32(len(values))
        self.parts.append(struct.pack(f">{len(values)}I", *values))

    def raw(self, b):
        self.parts.append(bytes(b))

    def blob(self, b):
        self.u32(len(b))
        self.parts.append(bytes(b))

    def bigint(self, v):
        v = int(v)
        self.blob(v.to_bytes(max(1, (v.bit_length() + 7) // 8), "big"))

    def bigints(self, values):
        values = list(values)
        self.u32(len(values))
        for v in values:
            self.bigint(v)

    def ciphertexts(self, cts):
        cts = list(cts)
        self.u32(len(cts))
        for c in cts:
            self.parts.append(c.to_bytes())

    def bitset(self, mask):
        mask = np.asarray(mask, dtype=bool)
        self.u32(len(mask))
        self.parts.append(np.packbits(mask, bitorder="little").tobytes())

    def text(self, s):
        self.blob(s.encode("utf-8"))

    def getvalue(self):
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data, offset=0, public_key=None):
        self.data = data
        self.pos = offset
        self.public_key = public_key

    def _take(self, size):
        if self.pos + size > len(self.data):
            raise ProtocolError("truncated message payload")
        out = self.data[self.pos:self.pos + size]
        self.pos += size
        return out

    def u8(self):
        return self._take(1)[0]

    def u32(self):
        return struct.unpack(">I", self._take(4))[0]

    def u32s(self):
        count = self.u32()
        return list(struct.unpack(f">{count}I", self._take(4 * count)))

    def raw(self, size):
        return bytes(self._take(size))

    def blob(self):
        return bytes(self._take(self.u32()))

    def bigint(self):
        return int.from_bytes(self.blob(), "big")

    def bigints(self):
        return [self.bigint() for _ in range(self.u32())]

    def ciphertexts(self):
        if self.public_key is None:
            raise ProtocolError("ciphertext payload received before the public key")
        count = self.u32()
        out = []
        for _ in range(count):
            c, self.pos = Ciphertext.read(self.data, self.pos, self.public_key)
            out.append(c)
        return out

    def bitset(self):
        bits = self.u32()
        packed = np.frombuffer(self._take((bits + 7) // 8), dtype=np.uint8)
        return np.unpackbits(packed, count=bits, bitorder="little").astype(bool)

    def text(self):
        return self.blob().decode("utf-8")

    def done(self):
        if self.pos != len(self.data):
            raise ProtocolError("trailing bytes after message payload")


# (field name, codec) per tag; codec names map to _Writer/_Reader methods
SCHEMA: dict[Tag, list[tuple[str, str]]] = {
    Tag.HELLO: [("party_id", "u32"), ("checksum", "digest")],
    Tag.HELLO_ACK: [("party_id", "u32"), ("checksum", "digest"),
                    ("n_features", "u32"), ("n_rows", "u32")],
    Tag.PUBLIC_KEY: [("public_key", "pubkey"), ("scale_bits", "u8")],
    Tag.TREE_START: [("tree", "u32"), ("sample", "bitset")],
    Tag.GRADIENTS: [("tree", "u32"), ("g", "ciphertexts"), ("h", "ciphertexts")],
    Tag.HIST_REQUEST: [("tree", "u32"), ("node", "u32"), ("rows", "bitset")],
    Tag.HISTOGRAMS: [("tree", "u32"), ("node", "u32"), ("bins", "u32s"),
                     ("G", "ciphertexts"), ("H", "ciphertexts")],
    Tag.SPLIT_ANNOUNCE: [("tree", "u32"), ("node", "u32"), ("feature", "u32"),
                         ("threshold_id", "u32")],
    Tag.SPLIT_RESULT: [("tree", "u32"), ("node", "u32"), ("record_id", "u32"),
                       ("left", "bitset")],
    Tag.INFER_QUERY: [("rows", "u32s"), ("record_ids", "u32s")],
    Tag.INFER_DIRECTION: [("go_left", "bitset")],
    Tag.LEAF_ARRIVAL: [("n_rows", "u32")],
    Tag.SESSION_END: [],
    Tag.ABORT: [("reason", "text")],
    Tag.ALIGN_PUBKEY: [("n", "bigint"), ("e", "bigint")],
    Tag.ALIGN_BLINDED: [("values", "bigints")],
    Tag.ALIGN_SIGNED: [("signed", "bigints"), ("digests", "digests")],
    Tag.ALIGN_INTERSECTION: [("digests", "digests")],
}

DIGEST_SIZE = 32


def _write_field(w, codec, value):
    if codec == "digest":
        if len(value) != DIGEST_SIZE:
            raise ProtocolError("digest must be 32 bytes")
        w.raw(value)
    elif codec == "digests":
        value = list(value)
        w.u32(len(value))
        for d in value:
            if len(d) != DIGEST_SIZE:
                raise ProtocolError("digest must be 32 bytes")
            w.raw(d)
    elif codec == "pubkey":
        w.raw(value.to_bytes())
    else:
        getattr(w, codec)(value)


def _read_field(r, codec):
    if codec == "digest":
        return r.raw(DIGEST_SIZE)
    if codec == "digests":
        return [r.raw(DIGEST_SIZE) for _ in range(r.u32())]
    if codec == "pubkey":
        key, r.pos = PaillierPublicKey.read(r.data, r.pos)
        return key
    return getattr(r, codec)()


def make(tag, session=0, **fields) -> Message:
    expected = {name for name, _ in SCHEMA[tag]}
    if set(fields) != expected:
        raise ProtocolError(f"{tag.name} expects fields {sorted(expected)}, got {sorted(fields)}")
    return Message(Tag(tag), session, fields)


def encode(msg: Message) -> bytes:
    w = _Writer()
    for name, codec in SCHEMA[msg.tag]:
        _write_field(w, codec, msg.fields[name])
    payload = w.getvalue()
    return FRAME_HEADER.pack(len(payload) + 9, int(msg.tag), msg.session) + payload


def decode(frame: bytes, public_key=None) -> Message:
    """Parse one complete frame (length prefix included)."""
    if len(frame) < HEADER_SIZE:
        raise ProtocolError("frame shorter than its header")
    length, tag, session = FRAME_HEADER.unpack_from(frame, 0)
    if length + 4 != len(frame):
        raise ProtocolError("frame length field does not match the frame")
    try:
        tag = Tag(tag)
    except ValueError:
        raise ProtocolError(f"unknown message tag {tag}") from None
    r = _Reader(frame, HEADER_SIZE, public_key)
    fields: dict[str, Any] = {}
    for name, codec in SCHEMA[tag]:
        fields[name] = _read_field(r, codec)
    r.done()
    return Message(tag, session, fields)


def ciphertext_count(msg: Message) -> int:
    return sum(len(msg.fields[name]) for name, codec in SCHEMA[msg.tag] if codec == "ciphertexts")
