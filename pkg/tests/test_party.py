import subprocess
import sys
import time

import numpy as np
import pytest

from privml.errors import PartyTimeout, RemoteError
from privml.net import Coordinator, Frame, MsgType, Party, PartyRole, TcpDeployment, TcpTransport, local_deployment
from privml.net.expr import E, Key
from privml.net.party import TensorStore
from privml.sharing import MulKind
from privml.tensor import Rng, rng_uniform


@pytest.fixture(params=["local", "tcp"])
def coord(request):
    if request.param == "local":
        transport = local_deployment(seed=1, record=True)
        c = Coordinator(transport, seed=1)
        c.parties = transport.parties
        yield c
    else:
        with TcpDeployment(seed=1, record=True) as dep:
            c = Coordinator(dep.transport, seed=1)
            c.parties = dep.parties
            yield c
    c.close()


def test_store_fetch_bit_exact(coord):
    t = rng_uniform(Rng(0), (3, 4), -1e6, 1e6)
    k = coord.store("P0", t)
    assert coord.fetch(k).tobytes() == t.tobytes()


def test_free_then_fetch_nacks(coord):
    k = coord.store("P1", np.ones(2))
    coord.free(k)
    with pytest.raises(RemoteError, match="unknown key"):
        coord.fetch(k)


def test_exec_add_and_composed(coord):
    r = Rng(2)
    a, b, c = (rng_uniform(r, (3, 3), -1, 1) for _ in range(3))
    ka, kb, kc = (coord.store("P0", x) for x in (a, b, c))
    k = coord.exec("P0", E("add", Key(ka.key), Key(kb.key)))
    assert np.array_equal(coord.fetch(k), a + b)
    k = coord.exec("P0", f"(matmul (add k:{ka.key} k:{kb.key}) k:{kc.key})")
    assert np.max(np.abs(coord.fetch(k) - (a + b) @ c)) < 1e-12


def test_unknown_op_nack(coord):
    with pytest.raises(RemoteError, match="unknown op"):
        coord.exec("P0", "(frobnicate 1)")
    with pytest.raises(RemoteError):
        coord.exec("P0", "(add k:12345 k:1)")


def test_composed_equals_stepwise(coord):
    r = Rng(3)
    x, w = rng_uniform(r, (4, 3), -1, 1), rng_uniform(r, (3, 2), -1, 1)
    kx, kw = coord.store("P1", x), coord.store("P1", w)
    step1 = coord.exec("P1", E("matmul", Key(kx.key), Key(kw.key)))
    step2 = coord.exec("P1", E("scale", Key(step1.key), 0.5))
    composed = coord.exec("P1", E("scale", E("matmul", Key(kx.key), Key(kw.key)), 0.5))
    assert coord.fetch(step2).tobytes() == coord.fetch(composed).tobytes()


def test_parallel(coord):
    assert coord.parallel([]) == []
    r = Rng(4)
    xs = [rng_uniform(r, (2, 2), -1, 1) for _ in range(16)]
    keys = [coord.store("P0", x) for x in xs]
    calls = [(coord.exec, "P0", E("scale", Key(k.key), 2.0)) for k in keys]
    par = [coord.fetch(k) for k in coord.parallel(calls)]
    seq = [coord.fetch(coord.exec("P0", E("scale", Key(k.key), 2.0))) for k in keys]
    assert all(np.array_equal(a, b) for a, b in zip(par, seq))
    out = coord.parallel([(coord.fetch, keys[0]), (coord.exec, "P0", "(nope)")], return_exceptions=True)
    assert np.array_equal(out[0], xs[0]) and isinstance(out[1], RemoteError)


def test_shared_beaver_and_reuse(coord):
    r = Rng(5)
    x, y = rng_uniform(r, (5, 4), -2, 2), rng_uniform(r, (4, 3), -2, 2)
    X, Y = coord.share(x), coord.share(y)
    t = coord.triple((5, 4), (4, 3), MulKind.MATMUL)
    Z = coord.exec_shared("(beaver {x} {y} {t})", x=X, y=Y, t=t)
    assert np.max(np.abs(coord.reveal(Z) - x @ y)) < 1e-9
    with pytest.raises(RemoteError, match="TripleReuseError"):
        coord.exec_shared("(beaver {x} {y} {t})", x=X, y=Y, t=t)


def test_shared_eval_fn_p3_sees_permutation(coord):
    x = rng_uniform(Rng(6), (3, 4), -3, 3)
    X = coord.share(x)
    s = coord.exec_shared('(eval_fn "sigmoid" 77 {x})', x=X)
    got = coord.reveal(s)[0]
    assert np.max(np.abs(got - 1 / (1 + np.exp(-x)))) < 1e-9
    (_, view), = coord.parties[PartyRole.P3].evaluator.transcript
    assert np.allclose(np.sort(view), np.sort(x.ravel()), atol=1e-9)


def test_share_halves_do_not_reveal(coord):
    x = np.full((4,), 3.0)
    X = coord.share(x)
    s0 = coord.fetch(X.k0)
    assert not np.allclose(s0, x)
    assert np.allclose(s0 + coord.fetch(X.k1), x)


def test_random_script_matches_replay(coord):
    r = Rng(7)
    vals = [rng_uniform(r, (3, 3), -1, 1) for _ in range(4)]
    keys = [coord.store("P0", v) for v in vals]
    local = list(vals)
    ops = ["add", "sub", "mul", "matmul", "neg", "T"]
    for i in range(100):
        op = ops[r.below(len(ops))]
        a, b = r.below(len(keys)), r.below(len(keys))
        if op in ("neg", "T"):
            k = coord.exec("P0", E(op, Key(keys[a].key)))
            local.append(-local[a] if op == "neg" else local[a].T)
        else:
            k = coord.exec("P0", E(op, Key(keys[a].key), Key(keys[b].key)))
            fn = {"add": np.add, "sub": np.subtract, "mul": np.multiply, "matmul": np.matmul}[op]
            local.append(fn(local[a], local[b]))
        keys.append(k)
        if np.max(np.abs(local[-1])) > 1e3:
            # keep magnitudes bounded so the comparison stays meaningful
            keys[-1] = coord.store("P0", np.clip(local[-1], -1e3, 1e3))
            local[-1] = np.clip(local[-1], -1e3, 1e3)
    for k, v in zip(keys, local):
        assert np.max(np.abs(coord.fetch(k) - v)) < 1e-9


def test_tensor_store_keys_unique_per_role():
    a, b = TensorStore("P0"), TensorStore("P1")
    ka, kb = a.put(np.ones(1)), b.put(np.ones(1))
    assert ka != kb and ka >> 56 == 0 and kb >> 56 == 1


def test_unreachable_party_times_out():
    t = TcpTransport({"P0": "127.0.0.1:1"}, timeout=0.5)
    with pytest.raises(PartyTimeout):
        t.request("P0", Frame(MsgType.FETCH, {"key": 1}))


def test_non_dealer_rejects_triple_request():
    p = Party("P0")
    reply = p.handle(Frame(MsgType.TRIPLE_REQ, {"kind": "matmul", "x_shape": [1, 1], "y_shape": [1, 1], "round": "t"}))
    assert reply.type is MsgType.NACK


def test_party_cli_process(tmp_path):
    import socket

    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    env = {"PRIVML_ROLE": "P0", "PRIVML_LISTEN": f"127.0.0.1:{port}", "PATH": "/usr/bin:/bin"}
    proc = subprocess.Popen([sys.executable, "-m", "privml", "party"], env=env, stdout=subprocess.PIPE, text=True)
    try:
        assert "listening" in proc.stdout.readline()
        t = TcpTransport({"P0": f"127.0.0.1:{port}"}, timeout=5)
        key = t.request("P0", Frame(MsgType.STORE, {"tensor": np.arange(3.0)}))["key"]
        assert np.array_equal(t.request("P0", Frame(MsgType.FETCH, {"key": key}))["tensor"], np.arange(3.0))
        t.close()
    finally:
        proc.terminate()
        proc.wait(5)
