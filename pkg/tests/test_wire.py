import json
import socket
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privml.errors import FormatError
from privml.net.expr import E, Expression, Key, Symbol, parse, tokenize
from privml.net.wire import Frame, MsgType, decode_frame, encode_frame, read_frame, write_frame
from privml.tensor import Rng, rng_normal

GOLDEN_FRAMES = {
    "store_tensor": Frame(MsgType.STORE, {"tensor": np.array([[1.0, -2.5]])}),
    "fetch": Frame(MsgType.FETCH, {"key": 72057594037927937}),
    "exec": Frame(MsgType.EXEC, {"expr": "(add k:1 k:2)", "round": "s0"}),
    "triple_req": Frame(MsgType.TRIPLE_REQ, {"kind": "matmul", "x_shape": [2, 3], "y_shape": [3, 1], "round": "t0"}),
    "grad_back": Frame(MsgType.GRAD_BACK, {"round": "s4/0", "share": np.array([0.5]), "loss": 0.25}),
    "ack_empty": Frame(MsgType.ACK, {}),
    "nack": Frame(MsgType.NACK, {"reason": "unknown key k:9"}),
    "store_mailbox": Frame(MsgType.STORE, {"mailbox": "beaver|a|b|t1", "tensors": [np.zeros(0), np.array(3.0)],
                                           "blob": b"\x00\xff", "none": None}),
}


def _same(a, b):
    if isinstance(a, np.ndarray):
        return isinstance(b, np.ndarray) and a.shape == b.shape and a.tobytes() == b.tobytes()
    if isinstance(a, (list, tuple)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return a == b


def test_golden_frames(golden):
    want = json.loads((golden / "frames.json").read_text())
    assert set(want) == set(GOLDEN_FRAMES)
    for name, frame in GOLDEN_FRAMES.items():
        raw = bytes.fromhex(want[name])
        assert encode_frame(frame) == raw, name
        back = decode_frame(raw)
        assert back.type is frame.type
        assert all(_same(frame.fields[k], back.fields[k]) for k in frame.fields)


def test_fetch_frame_by_hand():
    body = struct.pack("<I", 1) + b"\x03key" + b"i" + struct.pack("<q", 72057594037927937)
    raw = b"PSH1" + bytes([2]) + struct.pack("<Q", len(body)) + body
    assert encode_frame(GOLDEN_FRAMES["fetch"]) == raw


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 4), max_size=3), st.integers(0, 2**40), st.text(max_size=20))
def test_frame_roundtrip(shape, seed, text):
    t = rng_normal(Rng(seed), shape)
    f = Frame(MsgType.EXEC, {"t": t, "s": text, "n": seed, "x": 1.5, "l": [t, seed]})
    back = decode_frame(encode_frame(f))
    assert back.type is MsgType.EXEC
    assert all(_same(f.fields[k], back.fields[k]) for k in f.fields)


@pytest.mark.parametrize("raw", [
    b"XXXX" + bytes([1]) + struct.pack("<Q", 4) + struct.pack("<I", 0),
    b"PSH1" + bytes([99]) + struct.pack("<Q", 4) + struct.pack("<I", 0),
    b"PSH1" + bytes([1]) + struct.pack("<Q", 10) + struct.pack("<I", 0),
    b"PSH1" + bytes([1]) + struct.pack("<Q", 6) + struct.pack("<I", 1) + b"\x01k",
    b"PSH1",
])
def test_bad_frames(raw):
    with pytest.raises(FormatError):
        decode_frame(raw)


def test_socket_framing():
    a, b = socket.socketpair()
    try:
        f = GOLDEN_FRAMES["store_tensor"]
        write_frame(a, f)
        write_frame(a, GOLDEN_FRAMES["ack_empty"])
        assert _same(read_frame(b)["tensor"], f["tensor"])
        assert read_frame(b).type is MsgType.ACK
        a.close()
        with pytest.raises(EOFError):
            read_frame(b)
    finally:
        b.close()


# -- expressions ---------------------------------------------------------------


def test_parse_nested():
    e = parse('(matmul (add k:1 k:2) k:3)')
    assert e.op == "matmul" and isinstance(e.args[0], Expression)
    assert [k.id for k in e.keys()] == [1, 2, 3]


def test_parse_atoms():
    t = np.array([[1.0, 2.0]])
    e = parse(str(E("f", Key(5), t, 3, -1.25, "s,t", Symbol("W"))))
    assert e.args[0] == Key(5)
    assert np.array_equal(e.args[1], t)
    assert e.args[2:] == (3, -1.25, "s,t", Symbol("W"))


def test_print_parse_roundtrip():
    e = E("sub", Key(1), E("scale", E("beaver", Key(2), Key(3), Key(4)), 0.003125))
    assert str(parse(str(e))) == str(e)


@pytest.mark.parametrize("text", ["", "(", "(add k:1", "add k:1)", "(add k:1))", "(add k:x)", "()",
                                  '(add "open)', "(add t:!!)"])
def test_parse_errors(text):
    with pytest.raises(FormatError):
        parse(text)


def test_tokenize():
    assert tokenize('(a  "b c" k:1)') == ["(", "a", '"b c"', "k:1", ")"]
