import threading

import pytest

from secureboost.errors import TransportError
from secureboost.federation import messages as m
from secureboost.federation.messages import Tag
from secureboost.federation.transport import accept, channel_pair, connect, listen


def _leaf(n):
    return m.make(Tag.LEAF_ARRIVAL, 0, n_rows=n)


def test_fifo_order_and_counters():
    a, b = channel_pair("t", record=True)
    for i in range(50):
        a.send(_leaf(i))
    assert [b.recv(1.0)["n_rows"] for _ in range(50)] == list(range(50))
    size = len(m.encode(_leaf(0)))
    assert a.bytes_sent == b.bytes_received == 50 * size
    assert a.sent_by_tag[Tag.LEAF_ARRIVAL] == b.received_by_tag[Tag.LEAF_ARRIVAL] == 50
    assert [f for _, f in a.transcript] == [f for _, f in b.transcript]


def test_recv_timeout_and_close():
    a, b = channel_pair("t")
    with pytest.raises(TransportError, match="timed out"):
        b.recv(0.05)
    a.close()
    with pytest.raises(TransportError, match="closed"):
        b.recv(1.0)
    with pytest.raises(TransportError):
        a.send(_leaf(1))


def test_socket_channel_carries_frames(keys256):
    pk = keys256[0]
    server = listen("127.0.0.1:0")
    address = "127.0.0.1:%d" % server.getsockname()[1]
    got = []

    def serve():
        ch = accept(server, "srv", timeout=5)
        ch.public_key = pk
        got.append(ch.recv(5))
        got.append(ch.recv(5))
        ch.send(_leaf(len(got)))
        ch.close()

    t = threading.Thread(target=serve)
    t.start()
    client = connect(address, "cli", timeout=5)
    big = m.make(Tag.GRADIENTS, 3, tree=0, g=[pk.encrypt(i) for i in range(300)], h=[pk.encrypt(1)])
    client.send(_leaf(9))
    client.send(big)
    assert client.recv(5)["n_rows"] == 2
    t.join()
    server.close()
    assert got[0]["n_rows"] == 9 and got[1] == big
    assert client.bytes_sent == len(m.encode(_leaf(9))) + len(m.encode(big))
    with pytest.raises(TransportError):
        client.recv(1)
    client.close()


def test_connect_gives_up():
    server = listen("127.0.0.1:0")
    port = server.getsockname()[1]
    server.close()
    with pytest.raises(TransportError):
        connect(f"127.0.0.1:{port}", timeout=0.2)
