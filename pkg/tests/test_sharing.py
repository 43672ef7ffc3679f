import threading

import numpy as np
import pytest
from scipy import stats

from privml.errors import ProtocolError, ShapeError, TripleReuseError
from privml.sharing import (
    MemoryChannel,
    MulKind,
    Role,
    SharedPair,
    TrustedDealer,
    add_public,
    add_shared,
    beaver_mul,
    beaver_mul_pair,
    dealer_make_triple,
    mul_public,
    reconstruct,
    share,
    sub_shared,
)
from privml.tensor import Rng, rng_uniform


class FixedMask:
    """Rng stand-in whose uniform draws map to a chosen mask."""

    def __init__(self, mask, bound):
        self.u = (np.asarray(mask) + bound) / (2 * bound)

    def random(self, n):
        return self.u.reshape(-1)[:n]


def test_share_forced_example():
    h0, h1 = share(np.array([1.0]), FixedMask([-0.5], 100.0), 100.0, value_id="x")
    assert h0.share.tolist() == [-0.5] and h1.share.tolist() == [1.5]
    assert h0.role is Role.P0 and h1.role is Role.P1 and h0.value_id == h1.value_id


def test_share_roundtrip_many():
    rng = Rng(0)
    worst = 0.0
    for i in range(1000):
        shape = tuple(int(d) for d in 1 + np.array([i % 5, i % 3]))
        x = rng_uniform(rng, shape, -50, 50)
        h0, h1 = share(x, rng)
        worst = max(worst, np.max(np.abs(reconstruct(h0, h1) - x)))
    assert worst < 1e-9


def test_mask_uniform_ks():
    x = np.zeros(20000)
    h0, _ = share(x, Rng(4), bound=100.0)
    assert h0.share.min() >= -100 and h0.share.max() < 100
    assert stats.kstest(h0.share, stats.uniform(loc=-100, scale=200).cdf).pvalue > 0.001


def test_reconstruct_checks():
    a0, a1 = share(np.ones(3), Rng(1))
    b0, b1 = share(np.ones(3), Rng(2))
    with pytest.raises(ProtocolError):
        reconstruct(a0, b1)
    with pytest.raises(ProtocolError):
        reconstruct(a0, a0)


def test_linear_ops():
    r = Rng(3)
    x, y = np.array([1.0, 2.0]), np.array([-4.0, 0.5])
    x0, x1 = share(x, r)
    y0, y1 = share(y, r)
    assert np.allclose(reconstruct(add_public(x0, [10, 20]), add_public(x1, [10, 20])), x + [10, 20])
    assert np.allclose(reconstruct(add_shared(x0, y0), add_shared(x1, y1)), x + y)
    assert np.allclose(reconstruct(sub_shared(x0, y0), sub_shared(x1, y1)), x - y)
    assert np.allclose(reconstruct(mul_public(x0, 3.0), mul_public(x1, 3.0)), 3 * x)
    with pytest.raises(ShapeError):
        add_shared(x0, share(np.ones(3), r)[0])


def test_add_public_zero_is_identity():
    x0, x1 = share(np.array([2.0, -1.0]), Rng(7))
    z0 = add_public(x0, np.zeros(2))
    assert np.array_equal(z0.share, x0.share)


def test_triple_invariant():
    for kind, xs, ys in [(MulKind.ELEMENTWISE, (3, 4), (3, 4)), (MulKind.MATMUL, (2, 5), (5, 3))]:
        t = dealer_make_triple(xs, ys, kind, Rng(1))
        u = reconstruct(*t.u_shares)
        v = reconstruct(*t.v_shares)
        w = reconstruct(*t.w_shares)
        prod = u * v if kind is MulKind.ELEMENTWISE else u @ v
        assert np.max(np.abs(prod - w)) < 1e-9 * max(1, np.abs(w).max())
        assert u.shape == xs and v.shape == ys


def test_dealer_shape_mismatch():
    with pytest.raises(ShapeError):
        TrustedDealer(0).triple((2, 3), (4, 1), MulKind.MATMUL)
    with pytest.raises(ShapeError):
        TrustedDealer(0).triple((2, 3), (3, 2), MulKind.ELEMENTWISE)


def test_beaver_small_examples():
    d = TrustedDealer(5)
    r = Rng(5)
    x = SharedPair.of(np.array([[2.0]]), r)
    y = SharedPair.of(np.array([[3.0]]), r)
    assert abs(beaver_mul_pair(x, y, d.triple((1, 1), (1, 1), MulKind.ELEMENTWISE)).reveal()[0, 0] - 6) < 1e-9
    a = SharedPair.of(np.array([[1.0, 2.0]]), r)
    b = SharedPair.of(np.array([[3.0], [4.0]]), r)
    assert abs(a.matmul(b, d).reveal()[0, 0] - 11) < 1e-9


def test_triple_single_use():
    d = TrustedDealer(1)
    r = Rng(1)
    x = SharedPair.of(np.ones((2, 2)), r)
    t = d.triple((2, 2), (2, 2), MulKind.MATMUL)
    beaver_mul_pair(x, x, t)
    assert t.consumed
    with pytest.raises(TripleReuseError):
        beaver_mul_pair(x, x, t)


def test_beaver_threaded_matches_pair():
    r = Rng(2)
    x = rng_uniform(r, (4, 6), -3, 3)
    y = rng_uniform(r, (6, 2), -3, 3)
    X, Y = SharedPair.of(x, r), SharedPair.of(y, r)
    t = TrustedDealer(3).triple((4, 6), (6, 2), MulKind.MATMUL)
    c0, c1 = MemoryChannel.pair(timeout=5)
    out = {}

    def run(role, ch):
        out[role] = beaver_mul(getattr(X, role), getattr(Y, role), t, ch)

    ths = [threading.Thread(target=run, args=a) for a in (("p0", c0), ("p1", c1))]
    for th in ths:
        th.start()
    for th in ths:
        th.join()
    assert np.max(np.abs(reconstruct(out["p0"], out["p1"]) - x @ y)) < 1e-9


def test_beaver_channel_timeout():
    c0, _ = MemoryChannel.pair(timeout=0.05)
    t = TrustedDealer(0).triple((1,), (1,), MulKind.ELEMENTWISE)
    x = SharedPair.of(np.ones(1), Rng(0))
    with pytest.raises(ProtocolError):
        beaver_mul(x.p0, x.p0, t, c0)


def test_shared_pair_ops():
    r = Rng(6)
    d = TrustedDealer(6)
    x = rng_uniform(r, (3, 2), -1, 1)
    y = rng_uniform(r, (3, 2), -1, 1)
    X, Y = SharedPair.of(x, r), SharedPair.of(y, r)
    assert np.allclose((X + Y).reveal(), x + y)
    assert np.allclose((X - Y).reveal(), x - y)
    assert np.allclose((-X).reveal(), -x)
    assert np.allclose(X.T.reveal(), x.T)
    assert np.allclose(X.sum_rows().reveal(), x.sum(axis=0, keepdims=True))
    assert np.allclose(X.mul(Y, d).reveal(), x * y)
    assert np.allclose(X.add_public(np.ones((3, 2))).reveal(), x + 1)
    row = SharedPair.of(np.array([[1.0, 2.0]]), r)
    assert np.allclose(X.add_row(row).reveal(), x + [[1.0, 2.0]])


def test_dealer_thread_safe_unique_ids():
    d = TrustedDealer(0)
    ids = []
    lock = threading.Lock()

    def grab():
        for _ in range(50):
            t = d.triple((2,), (2,), MulKind.ELEMENTWISE)
            with lock:
                ids.append(t.triple_id)

    ths = [threading.Thread(target=grab) for _ in range(4)]
    for th in ths:
        th.start()
    for th in ths:
        th.join()
    assert len(set(ids)) == 200
