"""Binary framing between the sketching device and the learning server.

Frame: 1-byte type tag, 4-byte little-endian payload length, payload.
Payload fields are little-endian; arrays carry their dimensions as 4-byte
counts followed by 8-byte doubles.
"""

from __future__ import annotations

import enum
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

FRAME = struct.Struct("<BI")
MAX_PAYLOAD = 1 << 30
PROTOCOL_VERSION = 1


class ProtocolError(RuntimeError):
    pass


class MsgType(enum.IntEnum):
    HELLO = 1
    PROBE_RESPONSES = 2
    DELTA_N = 3
    SCALE_GRID = 4
    SKETCH = 5
    BOX = 6
    CENTROIDS = 7
    ERROR = 8


# field kinds: u32, u64, i64, f64 scalars; vec (u32 n + n f64); cvec (u32 n + 2n f64
# interleaved); mat (u32 rows, u32 cols, rows*cols f64 row-major); str (u32 n + utf-8)
SCHEMAS = {
    MsgType.HELLO: (("version", "u32"), ("role", "u32"), ("M", "u32"), ("D", "u32"),
                    ("path", "u32"), ("frequency_seed", "i64")),
    MsgType.PROBE_RESPONSES: (("responses", "mat"),),
    MsgType.DELTA_N: (("delta_n", "vec"),),
    MsgType.SCALE_GRID: (("scales", "vec"),),
    MsgType.SKETCH: (("sigma", "f64"), ("sample_count", "u64"), ("provenance", "u32"),
                     ("frequency_seed", "i64"), ("values", "cvec"), ("entropies", "vec"),
                     ("selected", "u32"), ("batch", "u32")),
    MsgType.BOX: (("lo", "vec"), ("hi", "vec")),
    MsgType.CENTROIDS: (("centroids", "mat"), ("weights", "vec")),
    MsgType.ERROR: (("code", "u32"), ("message", "str")),
}

_SCALARS = {"u32": struct.Struct("<I"), "u64": struct.Struct("<Q"),
            "i64": struct.Struct("<q"), "f64": struct.Struct("<d")}
_U32 = _SCALARS["u32"]


@dataclass
class Message:
    type: MsgType
    fields: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.fields[key]


def _encode_field(kind, value, out: list) -> None:
    if kind in _SCALARS:
        out.append(_SCALARS[kind].pack(value))
    elif kind == "vec":
        a = np.asarray(value, dtype="<f8").reshape(-1)
        out.append(_U32.pack(a.size))
        out.append(a.tobytes())
    elif kind == "cvec":
        z = np.asarray(value, dtype=np.complex128).reshape(-1)
        a = np.empty(2 * z.size, dtype="<f8")
        a[0::2], a[1::2] = z.real, z.imag
        out.append(_U32.pack(z.size))
        out.append(a.tobytes())
    elif kind == "mat":
        a = np.atleast_2d(np.asarray(value, dtype="<f8"))
        if a.ndim != 2:
            raise ProtocolError("matrix field must be 2-D")
        out.append(struct.pack("<II", *a.shape))
        out.append(np.ascontiguousarray(a).tobytes())
    elif kind == "str":
        b = str(value).encode("utf-8")
        out.append(_U32.pack(len(b)))
        out.append(b)
    else:
        raise ProtocolError(f"unknown field kind {kind}")


def encode_payload(msg: Message) -> bytes:
    try:
        schema = SCHEMAS[MsgType(msg.type)]
    except ValueError:
        raise ProtocolError(f"unknown message type {msg.type!r}") from None
    out: list = []
    for name, kind in schema:
        _encode_field(kind, msg.fields[name], out)
    return b"".join(out)


def encode(msg: Message) -> bytes:
    payload = encode_payload(msg)
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError("payload too large")
    return FRAME.pack(int(msg.type), len(payload)) + payload


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise ProtocolError(f"payload truncated: need {n} bytes at offset {self.pos}, "
                                f"have {len(self.buf) - self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def doubles(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)


def _decode_field(kind, r: _Reader):
    if kind in _SCALARS:
        st = _SCALARS[kind]
        return st.unpack(r.take(st.size))[0]
    if kind == "vec":
        (n,) = _U32.unpack(r.take(4))
        return r.doubles(n)
    if kind == "cvec":
        (n,) = _U32.unpack(r.take(4))
        a = r.doubles(2 * n)
        return a[0::2] + 1j * a[1::2]
    if kind == "mat":
        rows, cols = struct.unpack("<II", r.take(8))
        return r.doubles(rows * cols).reshape(rows, cols)
    if kind == "str":
        (n,) = _U32.unpack(r.take(4))
        try:
            return r.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"invalid utf-8 in string field: {exc}") from None
    raise ProtocolError(f"unknown field kind {kind}")


def decode_payload(tag: int, payload: bytes) -> Message:
    try:
        mtype = MsgType(tag)
    except ValueError:
        raise ProtocolError(f"unknown message tag {tag}") from None
    r = _Reader(payload)
    fields = {name: _decode_field(kind, r) for name, kind in SCHEMAS[mtype]}
    if r.pos != len(payload):
        raise ProtocolError(f"{mtype.name}: {len(payload) - r.pos} trailing bytes")
    return Message(mtype, fields)


def decode(frame: bytes) -> Message:
    if len(frame) < FRAME.size:
        raise ProtocolError("frame shorter than its header")
    tag, length = FRAME.unpack_from(frame)
    if length != len(frame) - FRAME.size:
        raise ProtocolError(f"length prefix {length} does not match payload size {len(frame) - FRAME.size}")
    return decode_payload(tag, frame[FRAME.size:])


def write_message(transport, msg: Message) -> int:
    """Send one message; returns the number of payload doubles (for accounting)."""
    data = encode(msg)
    transport.send(data)
    return payload_reals(msg)


def read_message(transport) -> Message:
    tag, length = FRAME.unpack(transport.recv_exact(FRAME.size))
    if tag not in MsgType._value2member_map_:
        raise ProtocolError(f"unknown message tag {tag}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"declared payload length {length} exceeds limit")
    return decode_payload(tag, transport.recv_exact(length))


def payload_reals(msg: Message) -> int:
    """Number of 8-byte real values carried by a message's array and f64 fields."""
    n = 0
    for name, kind in SCHEMAS[msg.type]:
        v = msg.fields[name]
        if kind == "f64":
            n += 1
        elif kind in ("vec", "mat"):
            n += np.asarray(v).size
        elif kind == "cvec":
            n += 2 * np.asarray(v).size
    return n


class SocketTransport:
    """Reliable ordered byte stream over a connected TCP socket."""

    def __init__(self, sock: socket.socket, timeout: float = 120.0):
        self.sock = sock
        self.sock.settimeout(timeout)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 120.0, retry_for: float = 10.0):
        deadline = time.monotonic() + retry_for
        while True:
            try:
                return cls(socket.create_connection((host, port), timeout=timeout), timeout)
            except OSError:
                if time.monotonic() > deadline:
                    raise
                time.sleep(0.05)

    def send(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise ProtocolError(f"send failed: {exc}") from exc

    def recv_exact(self, n: int) -> bytes:
        chunks, got = [], 0
        while got < n:
            try:
                chunk = self.sock.recv(min(n - got, 1 << 20))
            except socket.timeout:
                raise ProtocolError(f"timed out waiting for {n - got} bytes") from None
            except OSError as exc:
                raise ProtocolError(f"receive failed: {exc}") from exc
            if not chunk:
                raise ProtocolError("peer closed the connection")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def listen(host: str = "127.0.0.1", port: int = 0) -> socket.socket:
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen(1)
    return srv


class _Pipe:
    def __init__(self):
        self.buf = bytearray()
        self.cond = threading.Condition()
        self.closed = False


class MemoryTransport:
    """One end of an in-process duplex byte stream; build both ends with ``memory_pair``."""

    def __init__(self, inbox: _Pipe, outbox: _Pipe, timeout: float = 120.0):
        self.inbox, self.outbox, self.timeout = inbox, outbox, timeout

    def send(self, data: bytes) -> None:
        with self.outbox.cond:
            if self.outbox.closed:
                raise ProtocolError("peer closed the connection")
            self.outbox.buf += data
            self.outbox.cond.notify_all()

    def recv_exact(self, n: int) -> bytes:
        deadline = time.monotonic() + self.timeout
        with self.inbox.cond:
            while len(self.inbox.buf) < n:
                if self.inbox.closed:
                    raise ProtocolError("peer closed the connection")
                left = deadline - time.monotonic()
                if left <= 0:
                    raise ProtocolError(f"timed out waiting for {n - len(self.inbox.buf)} bytes")
                self.inbox.cond.wait(left)
            out = bytes(self.inbox.buf[:n])
            del self.inbox.buf[:n]
            return out

    def close(self) -> None:
        for pipe in (self.inbox, self.outbox):
            with pipe.cond:
                pipe.closed = True
                pipe.cond.notify_all()


def memory_pair(timeout: float = 120.0) -> tuple[MemoryTransport, MemoryTransport]:
    a_to_b, b_to_a = _Pipe(), _Pipe()
    return MemoryTransport(b_to_a, a_to_b, timeout), MemoryTransport(a_to_b, b_to_a, timeout)
