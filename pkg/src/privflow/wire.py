"""Framed message protocol between meters and the operator.

Every frame is ``4-byte big-endian length | 1-byte tag | payload`` where the
length counts the tag byte plus the payload. The same frames travel over a
loopback TCP socket (the default for realistic runs, everything on one host
with a preset port) or over an in-process queue pair used by tests and
single-process simulations; both obey the identical contract.

Voltage samples inside DATA frames are fixed-point integers in
millivolt-per-unit: ``i = round(v_pu * 1000 * 2**42)`` stored as signed
64-bit big-endian. For magnitudes below 2 p.u. the scaling is exact in
float64, so a decoded value differs from the original by at most one
quantum (about 2.3e-16 p.u.).
"""

import queue
import socket
import struct

import numpy as np

from .pedersen import decode_int, encode_int

__all__ = [
    "TAG_HELLO", "TAG_COMMITS", "TAG_CHALLENGE", "TAG_RESPONSES",
    "TAG_VERDICT", "TAG_DATA", "TAG_ACK", "TransportError",
    "pack_frame", "SocketConn", "PipeConn", "pipe_pair", "loopback_pair",
    "encode_hello", "decode_hello", "encode_commits", "decode_commits",
    "encode_challenge", "decode_challenge", "encode_responses",
    "decode_responses", "encode_verdict", "decode_verdict",
    "encode_data", "decode_data", "FIXED_POINT_SCALE",
]

TAG_HELLO = 0x01
TAG_COMMITS = 0x02
TAG_CHALLENGE = 0x03
TAG_RESPONSES = 0x04
TAG_VERDICT = 0x05
TAG_DATA = 0x06
TAG_ACK = 0x07

_TAGS = (TAG_HELLO, TAG_COMMITS, TAG_CHALLENGE, TAG_RESPONSES,
         TAG_VERDICT, TAG_DATA, TAG_ACK)

# millivolt-p.u. with 42 fractional bits
FIXED_POINT_SCALE = 1000.0 * float(2 ** 42)


class TransportError(Exception):
    pass


def pack_frame(tag, payload=b""):
    if tag not in _TAGS:
        raise ValueError("unknown tag 0x%02x" % tag)
    return struct.pack(">I", 1 + len(payload)) + bytes([tag]) + payload


# ---------------------------------------------------------------------------
# Connections
# ---------------------------------------------------------------------------


class SocketConn:
    """Blocking framed connection over a stream socket."""

    def __init__(self, sock, timeout=30.0):
        self.sock = sock
        sock.settimeout(timeout)

    def send_frame(self, tag, payload=b""):
        try:
            self.sock.sendall(pack_frame(tag, payload))
        except OSError as e:
            raise TransportError("send failed: %s" % e)

    def _recv_exact(self, n):
        chunks = []
        while n > 0:
            try:
                chunk = self.sock.recv(min(n, 1 << 20))
            except socket.timeout:
                raise TransportError("receive timed out")
            except OSError as e:
                raise TransportError("receive failed: %s" % e)
            if not chunk:
                raise TransportError("connection closed mid-frame")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def recv_frame(self):
        """Returns (tag, payload)."""
        (length,) = struct.unpack(">I", self._recv_exact(4))
        if length < 1:
            raise TransportError("zero-length frame")
        body = self._recv_exact(length)
        return body[0], body[1:]

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


class PipeConn:
    """In-process counterpart of SocketConn backed by a queue pair."""

    def __init__(self, inbox, outbox, timeout=30.0):
        self.inbox = inbox
        self.outbox = outbox
        self.timeout = timeout
        self.closed = False

    def send_frame(self, tag, payload=b""):
        if self.closed:
            raise TransportError("send on closed connection")
        # round-trip through pack_frame so both transports exercise the codec
        data = pack_frame(tag, payload)
        self.outbox.put(data)

    def recv_frame(self):
        try:
            data = self.inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError("receive timed out")
        if data is None:  # close sentinel from the peer
            raise TransportError("connection closed by peer")
        (length,) = struct.unpack(">I", data[:4])
        body = data[4:]
        if length != len(body) or length < 1:
            raise TransportError("malformed frame")
        return body[0], body[1:]

    def close(self):
        if not self.closed:
            self.closed = True
            self.outbox.put(None)


def pipe_pair(timeout=30.0):
    """Two connected PipeConn endpoints."""
    a_to_b, b_to_a = queue.Queue(), queue.Queue()
    return (PipeConn(b_to_a, a_to_b, timeout), PipeConn(a_to_b, b_to_a, timeout))


def loopback_pair(timeout=30.0, port=0):
    """Two connected SocketConn endpoints over loopback TCP.

    With port=0 the OS picks a free port; pass a fixed port to pin it.
    """
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind(("127.0.0.1", port))
    server.listen(1)
    client = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    client.connect(server.getsockname())
    accepted, _ = server.accept()
    server.close()
    for s in (client, accepted):
        s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return SocketConn(client, timeout), SocketConn(accepted, timeout)


# ---------------------------------------------------------------------------
# Message payload codecs
# ---------------------------------------------------------------------------


def encode_hello(dim, shares, session_id):
    return struct.pack(">HBQ", dim, shares, session_id)


def decode_hello(payload):
    if len(payload) != 11:
        raise TransportError("bad HELLO length %d" % len(payload))
    dim, shares, session_id = struct.unpack(">HBQ", payload)
    return dim, shares, session_id


def encode_commits(elements):
    """elements: list of serialized group element byte strings."""
    parts = [struct.pack(">H", len(elements))]
    for e in elements:
        parts.append(struct.pack(">H", len(e)))
        parts.append(e)
    return b"".join(parts)


def decode_commits(payload):
    (count,) = struct.unpack(">H", payload[:2])
    off, out = 2, []
    for _ in range(count):
        if off + 2 > len(payload):
            raise TransportError("truncated COMMITS")
        (size,) = struct.unpack(">H", payload[off:off + 2])
        off += 2
        if off + size > len(payload):
            raise TransportError("truncated COMMITS element")
        out.append(payload[off:off + size])
        off += size
    if off != len(payload):
        raise TransportError("trailing bytes in COMMITS")
    return out


def encode_challenge(b):
    if b not in (0, 1):
        raise ValueError("challenge bit must be 0 or 1")
    return bytes([b])


def decode_challenge(payload):
    if len(payload) != 1 or payload[0] not in (0, 1):
        raise TransportError("bad CHALLENGE payload")
    return payload[0]


def encode_responses(values):
    parts = [struct.pack(">H", len(values))]
    parts.extend(encode_int(v) for v in values)
    return b"".join(parts)


def decode_responses(payload):
    (count,) = struct.unpack(">H", payload[:2])
    off, out = 2, []
    for _ in range(count):
        value, off = decode_int(payload, off)
        out.append(value)
    if off != len(payload):
        raise TransportError("trailing bytes in RESPONSES")
    return out


def encode_verdict(accept):
    return b"\x01" if accept else b"\x00"


def decode_verdict(payload):
    if len(payload) != 1 or payload[0] not in (0, 1):
        raise TransportError("bad VERDICT payload")
    return payload[0] == 1


def encode_data(matrix):
    """T x I float64 p.u. matrix -> header + big-endian int64 fixed point."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("DATA payload must be 2-D")
    rows, cols = m.shape
    fixed = np.round(m * FIXED_POINT_SCALE).astype(np.int64)
    return struct.pack(">IH", rows, cols) + fixed.astype(">i8").tobytes()


def decode_data(payload):
    rows, cols = struct.unpack(">IH", payload[:6])
    body = payload[6:]
    if len(body) != rows * cols * 8:
        raise TransportError("DATA length mismatch")
    fixed = np.frombuffer(body, dtype=">i8").astype(np.int64)
    return (fixed / FIXED_POINT_SCALE).reshape(rows, cols)
