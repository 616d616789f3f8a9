"""Duplex channels between two parties.

Both implementations move encoded frames, so byte counters measure exactly
what would cross a network. Counters are updated under a lock together with
the send, which keeps them consistent when parties run on separate threads.
"""
import queue
import socket
import struct
import threading
import time
from collections import Counter

from ..errors import TransportError
from . import messages

DEFAULT_TIMEOUT = 120.0


class Channel:
    """Common bookkeeping; subclasses implement ``_send_frame``/``_recv_frame``."""

    def __init__(self, name="", record=False):
        self.name = name
        self.public_key = None
        self.bytes_sent = 0
        self.bytes_received = 0
        self.sent_by_tag = Counter()
        self.bytes_by_tag = Counter()
        self.ciphertexts_by_tag = Counter()
        self.received_by_tag = Counter()
        self.bytes_received_by_tag = Counter()
        self.ciphertexts_received_by_tag = Counter()
        self.transcript = [] if record else None
        self._lock = threading.Lock()
        self.closed = False

    def send(self, msg):
        frame = messages.encode(msg)
        with self._lock:
            self._send_frame(frame)
            self.bytes_sent += len(frame)
            self.sent_by_tag[msg.tag] += 1
            self.bytes_by_tag[msg.tag] += len(frame)
            self.ciphertexts_by_tag[msg.tag] += messages.ciphertext_count(msg)
            if self.transcript is not None:
                self.transcript.append(("sent", frame))

    def recv(self, timeout=DEFAULT_TIMEOUT):
        frame = self._recv_frame(timeout)
        msg = messages.decode(frame, self.public_key)
        self.bytes_received += len(frame)
        self.received_by_tag[msg.tag] += 1
        self.bytes_received_by_tag[msg.tag] += len(frame)
        self.ciphertexts_received_by_tag[msg.tag] += messages.ciphertext_count(msg)
        if self.transcript is not None:
            self.transcript.append(("received", frame))
        return msg

    def close(self):
        self.closed = True

    def _send_frame(self, frame):
        raise NotImplementedError

    def _recv_frame(self, timeout):
        raise NotImplementedError


class QueueChannel(Channel):
    def __init__(self, outbox, inbox, name="", record=False):
        super().__init__(name, record)
        self._outbox = outbox
        self._inbox = inbox

    def _send_frame(self, frame):
        if self.closed:
            raise TransportError(f"channel {self.name} is closed")
        self._outbox.put(frame)

    def _recv_frame(self, timeout):
        try:
            frame = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportError(f"timed out waiting on channel {self.name}") from None
        if frame is None:
            raise TransportError(f"peer closed channel {self.name}")
        return frame

    def close(self):
        if not self.closed:
            self.closed = True
            self._outbox.put(None)


def channel_pair(name="", record=False):
    """Two connected in-process endpoints (FIFO in each direction)."""
    a_to_b, b_to_a = queue.Queue(), queue.Queue()
    a = QueueChannel(a_to_b, b_to_a, f"{name}:a", record)
    b = QueueChannel(b_to_a, a_to_b, f"{name}:b", record)
    return a, b


class SocketChannel(Channel):
    """Length-prefixed frames over a connected TCP socket."""

    def __init__(self, sock, name="", record=False):
        super().__init__(name, record)
        self.sock = sock
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _send_frame(self, frame):
        try:
            self.sock.sendall(frame)
        except OSError as exc:
            raise TransportError(f"send failed on {self.name}: {exc}") from exc

    def _read_exact(self, size):
        chunks, remaining = [], size
        while remaining:
            try:
                chunk = self.sock.recv(min(remaining, 1 << 20))
            except socket.timeout:
                raise TransportError(f"timed out waiting on channel {self.name}") from None
            except OSError as exc:
                raise TransportError(f"recv failed on {self.name}: {exc}") from exc
            if not chunk:
                raise TransportError(f"peer closed channel {self.name}")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def _recv_frame(self, timeout):
        self.sock.settimeout(timeout)
        head = self._read_exact(4)
        (length,) = struct.unpack(">I", head)
        return head + self._read_exact(length)

    def close(self):
        if not self.closed:
            self.closed = True
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self.sock.close()


def parse_address(address):
    host, _, port = address.rpartition(":")
    return host or "127.0.0.1", int(port)


def listen(address, backlog=4):
    host, port = parse_address(address)
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((host, port))
    server.listen(backlog)
    return server


def accept(server, name="", record=False, timeout=DEFAULT_TIMEOUT):
    server.settimeout(timeout)
    try:
        sock, _ = server.accept()
    except socket.timeout:
        raise TransportError("no peer connected before the timeout") from None
    return SocketChannel(sock, name, record)


def connect(address, name="", record=False, timeout=DEFAULT_TIMEOUT, retry_interval=0.05):
    """Connect, retrying until the listener is up or ``timeout`` elapses."""
    host, port = parse_address(address)
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            return SocketChannel(sock, name, record)
        except OSError as exc:
            if time.monotonic() > deadline:
                raise TransportError(f"could not connect to {address}: {exc}") from exc
            time.sleep(retry_interval)
