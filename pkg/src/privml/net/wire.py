"""Frame format shared by every party.

Frame::

    magic  4 bytes   b"PSH1"
    type   1 byte    MsgType
    length 8 bytes   little-endian unsigned body length
    body   length bytes

Body: ``count:u32le`` followed by ``count`` entries, each
``keylen:u8 key:ascii tag:u8 value``. Value encodings by tag:

    b'i'  int64 little-endian
    b'f'  float64 little-endian
    b's'  u32le length + UTF-8
    b'b'  u32le length + raw bytes
    b't'  tensor codec (rank:u64le, dims:u64le*rank, data:f64le*)
    b'l'  u32le count + that many (tag, value) items
    b'n'  no payload (None)
"""

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import FormatError
from ..tensor import decode_tensor, encode_tensor

MAGIC = b"PSH1"
HEADER = struct.Struct("<4sBQ")
MAX_BODY = 1 << 32


class MsgType(enum.IntEnum):
    STORE = 1
    FETCH = 2
    FREE = 3
    EXEC = 4
    EVAL_FN = 5
    SHARE_BACK = 6
    TRIPLE_REQ = 7
    HIDDEN_FWD = 8
    GRAD_BACK = 9
    ACK = 10
    NACK = 11


@dataclass
class Frame:
    type: MsgType
    fields: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.fields[name]

    def get(self, name, default=None):
        return self.fields.get(name, default)


def _encode_value(v, out):
    if v is None:
        out += b"n"
    elif isinstance(v, (bool, int, np.integer)):
        out += b"i" + struct.pack("<q", int(v))
    elif isinstance(v, (float, np.floating)):
        out += b"f" + struct.pack("<d", float(v))
    elif isinstance(v, str):
        raw = v.encode()
        out += b"s" + struct.pack("<I", len(raw)) + raw
    elif isinstance(v, (bytes, bytearray, memoryview)):
        out += b"b" + struct.pack("<I", len(v)) + bytes(v)
    elif isinstance(v, np.ndarray):
        out += b"t" + encode_tensor(v)
    elif isinstance(v, (list, tuple)):
        out += b"l" + struct.pack("<I", len(v))
        for item in v:
            _encode_value(item, out)
    else:
        raise TypeError(f"cannot encode {type(v).__name__}")


def encode_body(fields):
    out = bytearray(struct.pack("<I", len(fields)))
    for key, value in fields.items():
        k = key.encode("ascii")
        if len(k) > 255:
            raise ValueError(f"field name too long: {key!r}")
        out += struct.pack("<B", len(k)) + k
        _encode_value(value, out)
    return bytes(out)


def _need(buf, off, n):
    if off + n > len(buf):
        raise FormatError("truncated frame body")


def _decode_value(buf, off):
    _need(buf, off, 1)
    tag = buf[off:off + 1]
    off += 1
    if tag == b"n":
        return None, off
    if tag == b"i":
        _need(buf, off, 8)
        return struct.unpack_from("<q", buf, off)[0], off + 8
    if tag == b"f":
        _need(buf, off, 8)
        return struct.unpack_from("<d", buf, off)[0], off + 8
    if tag in (b"s", b"b"):
        _need(buf, off, 4)
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        _need(buf, off, n)
        raw = bytes(buf[off:off + n])
        return (raw.decode() if tag == b"s" else raw), off + n
    if tag == b"t":
        return decode_tensor(buf, off)
    if tag == b"l":
        _need(buf, off, 4)
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        items = []
        for _ in range(n):
            item, off = _decode_value(buf, off)
            items.append(item)
        return items, off
    raise FormatError(f"unknown value tag {tag!r}")


def decode_body(buf):
    buf = memoryview(buf)
    _need(buf, 0, 4)
    (count,) = struct.unpack_from("<I", buf, 0)
    off = 4
    fields = {}
    for _ in range(count):
        _need(buf, off, 1)
        klen = buf[off]
        off += 1
        _need(buf, off, klen)
        key = bytes(buf[off:off + klen]).decode("ascii")
        off += klen
        fields[key], off = _decode_value(buf, off)
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes in frame body")
    return fields


def encode_frame(frame):
    body = encode_body(frame.fields)
    return HEADER.pack(MAGIC, int(frame.type), len(body)) + body


def decode_header(head):
    magic, mtype, length = HEADER.unpack(head)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    try:
        mtype = MsgType(mtype)
    except ValueError:
        raise FormatError(f"unknown message type {mtype}") from None
    if length > MAX_BODY:
        raise FormatError(f"frame body too large: {length}")
    return mtype, length


def decode_frame(data):
    data = memoryview(data)
    if len(data) < HEADER.size:
        raise FormatError("truncated frame header")
    mtype, length = decode_header(bytes(data[:HEADER.size]))
    if len(data) != HEADER.size + length:
        raise FormatError("frame length does not match header")
    return Frame(mtype, decode_body(data[HEADER.size:]))


def _recv_exact(sock, n):
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        r = sock.recv_into(view[got:], n - got)
        if r == 0:
            if got == 0:
                raise EOFError("connection closed")
            raise FormatError("connection closed mid-frame")
        got += r
    return buf


def read_frame(sock):
    mtype, length = decode_header(bytes(_recv_exact(sock, HEADER.size)))
    body = _recv_exact(sock, length) if length else b""
    return Frame(mtype, decode_body(body))


def write_frame(sock, frame):
    sock.sendall(encode_frame(frame))


def ack(**fields):
    return Frame(MsgType.ACK, fields)


def nack(reason):
    return Frame(MsgType.NACK, {"reason": str(reason)})


__all__ = [
    "MAGIC",
    "Frame",
    "MsgType",
    "ack",
    "decode_body",
    "decode_frame",
    "encode_body",
    "encode_frame",
    "nack",
    "read_frame",
    "write_frame",
]
