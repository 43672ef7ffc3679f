"""Two-party additive secret sharing over float64 with Beaver multiplication.

A value ``x`` is held as ``x = s0 + s1`` where party P0 owns ``s0`` and P1
owns ``s1``. Linear operations are local. Multiplying two shared values
consumes a dealer-issued triple ``(u, v, w = u*v)``; the parties open
``x - u`` and ``y - v`` to each other and finish locally.

Functions taking a single :class:`ShareHandle` are the party-local view and
are what a remote party executes. :class:`SharedPair` bundles both halves for
in-process simulation.
"""

import enum
import hashlib
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ProtocolError, ShapeError, TripleReuseError
from .tensor import Rng, as_tensor, rng_uniform

__all__ = [
    "DEFAULT_MASK_BOUND",
    "BeaverTriple",
    "MemoryChannel",
    "MulKind",
    "Role",
    "ShareHandle",
    "SharedPair",
    "TripleShare",
    "TrustedDealer",
    "add_public",
    "add_shared",
    "beaver_close",
    "beaver_mul",
    "beaver_mul_pair",
    "beaver_open",
    "dealer_make_triple",
    "derive_id",
    "mul_public",
    "reconstruct",
    "share",
    "sub_shared",
]

DEFAULT_MASK_BOUND = 100.0


class Role(str, enum.Enum):
    P0 = "P0"
    P1 = "P1"

    @property
    def peer(self):
        return Role.P1 if self is Role.P0 else Role.P0


class MulKind(str, enum.Enum):
    ELEMENTWISE = "elementwise"
    MATMUL = "matmul"


def derive_id(op, *parts):
    """Deterministic value id so both parties name a result identically."""
    h = hashlib.blake2b(op.encode(), digest_size=8)
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(repr(p.shape).encode())
            h.update(np.ascontiguousarray(p).tobytes())
        else:
            h.update(b"|" + str(p).encode())
    return f"{op}:{h.hexdigest()}"


@dataclass(frozen=True, eq=False)
class ShareHandle:
    role: Role
    value_id: str
    share: np.ndarray

    @property
    def shape(self):
        return self.share.shape

    def derived(self, op, share, *parts):
        return ShareHandle(self.role, derive_id(op, self.value_id, *parts), share)


def share(x, rng, bound=DEFAULT_MASK_BOUND, value_id=None):
    """Split ``x`` into ``(P0 handle, P1 handle)``.

    P0 receives a mask drawn uniform on ``[-bound, bound)`` and P1 receives
    ``x - mask``.
    """
    x = as_tensor(x, "x")
    mask = rng_uniform(rng, x.shape, -bound, bound)
    if value_id is None:
        value_id = derive_id("share", rng.seed, rng.counter)
    return (ShareHandle(Role.P0, value_id, mask),
            ShareHandle(Role.P1, value_id, x - mask))


def _check_pair(h0, h1):
    if {h0.role, h1.role} != {Role.P0, Role.P1}:
        raise ProtocolError(f"need one P0 and one P1 share, got {h0.role}, {h1.role}")
    if h0.value_id != h1.value_id:
        raise ProtocolError(f"value id mismatch: {h0.value_id} != {h1.value_id}")
    if h0.share.shape != h1.share.shape:
        raise ShapeError("reconstruct", h0.share.shape, h1.share.shape)


def reconstruct(h0, h1):
    _check_pair(h0, h1)
    return h0.share + h1.share


def add_public(h, a):
    """Each party adds ``a/2`` to its share; run symmetrically by P0 and P1."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape != h.shape:
        raise ShapeError("add_public", h.shape, a.shape)
    return h.derived("add_public", h.share + a / 2.0, a)


def add_shared(hx, hy):
    if hx.role != hy.role:
        raise ProtocolError("add_shared across roles")
    if hx.shape != hy.shape:
        raise ShapeError("add_shared", hx.shape, hy.shape)
    return hx.derived("add_shared", hx.share + hy.share, hy.value_id)


def sub_shared(hx, hy):
    if hx.role != hy.role:
        raise ProtocolError("sub_shared across roles")
    if hx.shape != hy.shape:
        raise ShapeError("sub_shared", hx.shape, hy.shape)
    return hx.derived("sub_shared", hx.share - hy.share, hy.value_id)


def mul_public(h, a):
    """Element-wise product with a public scalar or same-shape tensor."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim and a.shape != h.shape:
        raise ShapeError("mul_public", h.shape, a.shape)
    return h.derived("mul_public", h.share * a, a)


# -- Beaver triples ----------------------------------------------------------


def _product(kind, a, b):
    return a @ b if kind is MulKind.MATMUL else a * b


def _check_mul_shapes(kind, x_shape, y_shape):
    x_shape, y_shape = tuple(x_shape), tuple(y_shape)
    if kind is MulKind.MATMUL:
        if len(x_shape) != 2 or len(y_shape) != 2 or x_shape[1] != y_shape[0]:
            raise ShapeError("beaver matmul", x_shape, y_shape)
    elif x_shape != y_shape:
        raise ShapeError("beaver elementwise", x_shape, y_shape)
    return x_shape, y_shape


@dataclass(eq=False)
class TripleShare:
    """One party's half ``(u_i, v_i, w_i)`` of a Beaver triple. Single use."""

    role: Role
    triple_id: str
    kind: MulKind
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    consumed: bool = False
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def consume(self):
        with self._lock:
            if self.consumed:
                raise TripleReuseError(f"triple {self.triple_id} already used by {self.role.value}")
            self.consumed = True


@dataclass(eq=False)
class BeaverTriple:
    triple_id: str
    kind: MulKind
    x_shape: tuple
    y_shape: tuple
    halves: tuple  # (TripleShare for P0, TripleShare for P1)

    def half(self, role):
        return self.halves[0] if Role(role) is Role.P0 else self.halves[1]

    def _handles(self, name):
        return tuple(ShareHandle(h.role, f"{self.triple_id}.{name}", getattr(h, name))
                     for h in self.halves)

    @property
    def u_shares(self):
        return self._handles("u")

    @property
    def v_shares(self):
        return self._handles("v")

    @property
    def w_shares(self):
        return self._handles("w")

    @property
    def consumed(self):
        return any(h.consumed for h in self.halves)


def dealer_make_triple(x_shape, y_shape, kind, rng, bound=DEFAULT_MASK_BOUND, triple_id=None):
    """Random ``u``, ``v`` uniform on ``[-bound, bound)``, ``w = u (*) v``; all freshly shared."""
    kind = MulKind(kind)
    x_shape, y_shape = _check_mul_shapes(kind, x_shape, y_shape)
    if triple_id is None:
        triple_id = derive_id("triple", rng.seed, rng.counter)
    u = rng_uniform(rng, x_shape, -bound, bound)
    v = rng_uniform(rng, y_shape, -bound, bound)
    w = _product(kind, u, v)
    parts = [share(t, rng, bound) for t in (u, v, w)]
    halves = tuple(
        TripleShare(role, triple_id, kind, *(p[i].share for p in parts))
        for i, role in enumerate((Role.P0, Role.P1))
    )
    return BeaverTriple(triple_id, kind, x_shape, y_shape, halves)


class TrustedDealer:
    """Triple service. Safe to call from several threads."""

    def __init__(self, seed=0, bound=DEFAULT_MASK_BOUND):
        self._rng = Rng(seed)
        self.bound = bound
        self._lock = threading.Lock()
        self.issued = 0

    def triple(self, x_shape, y_shape, kind=MulKind.MATMUL):
        with self._lock:
            self.issued += 1
            rng = self._rng.child("triple", self.issued)
        return dealer_make_triple(x_shape, y_shape, kind, rng, self.bound)


def _as_half(triple, role):
    return triple.half(role) if isinstance(triple, BeaverTriple) else triple


def beaver_open(hx, hy, t):
    """Local first half: this party's shares of ``x - u`` and ``y - v``.

    Marks the triple half consumed.
    """
    t = _as_half(t, hx.role)
    if hx.role != hy.role or t.role != hx.role:
        raise ProtocolError("beaver_open: shares and triple from different parties")
    if hx.shape != t.u.shape or hy.shape != t.v.shape:
        raise ShapeError(f"beaver {t.kind.value}", hx.shape, hy.shape, t.u.shape, t.v.shape)
    _check_mul_shapes(t.kind, hx.shape, hy.shape)
    t.consume()
    return hx.share - t.u, hy.share - t.v


def beaver_close(hx, hy, t, eps, delta):
    """Local second half given the opened ``eps = x - u`` and ``delta = y - v``.

    P0 alone adds the public ``eps (*) delta`` term.
    """
    t = _as_half(t, hx.role)
    k = t.kind
    z = _product(k, eps, t.v) + _product(k, t.u, delta) + t.w
    if hx.role is Role.P0:
        z = z + _product(k, eps, delta)
    return hx.derived(f"beaver_{k.value}", z, hy.value_id, t.triple_id)


def beaver_mul(hx, hy, t, channel):
    """Party-local Beaver multiplication; blocks on ``channel`` for the peer's openings."""
    eps_i, delta_i = beaver_open(hx, hy, t)
    tag = ("beaver", hx.value_id, hy.value_id, _as_half(t, hx.role).triple_id)
    eps_j, delta_j = channel.exchange(tag, [eps_i, delta_i])
    return beaver_close(hx, hy, t, eps_i + eps_j, delta_i + delta_j)


def beaver_mul_pair(x, y, triple):
    """Run both parties' sides in one thread; same arithmetic as :func:`beaver_mul`."""
    e0, d0 = beaver_open(x.p0, y.p0, triple)
    e1, d1 = beaver_open(x.p1, y.p1, triple)
    eps, delta = e0 + e1, d0 + d1
    return SharedPair(beaver_close(x.p0, y.p0, triple, eps, delta),
                      beaver_close(x.p1, y.p1, triple, eps, delta))


class MemoryChannel:
    """In-process two-party exchange endpoint.

    Messages are matched by tag, never by arrival order, so independent
    exchanges may interleave freely.
    """

    def __init__(self, role, board, cond, timeout):
        self.role = Role(role)
        self._board = board
        self._cond = cond
        self.timeout = timeout

    @classmethod
    def pair(cls, timeout=30.0):
        board, cond = {}, threading.Condition()
        return cls(Role.P0, board, cond, timeout), cls(Role.P1, board, cond, timeout)

    def exchange(self, tag, payload):
        with self._cond:
            self._board[(self.role, tag)] = payload
            self._cond.notify_all()
            key = (self.role.peer, tag)
            if not self._cond.wait_for(lambda: key in self._board, self.timeout):
                raise ProtocolError(f"{self.role.value}: no peer message for {tag!r}")
            return self._board.pop(key)


@dataclass(frozen=True, eq=False)
class SharedPair:
    """Both halves of one shared value, for in-process simulation."""

    p0: ShareHandle
    p1: ShareHandle

    def __post_init__(self):
        _check_pair(self.p0, self.p1)

    def __iter__(self):
        return iter((self.p0, self.p1))

    @classmethod
    def of(cls, x, rng, bound=DEFAULT_MASK_BOUND):
        return cls(*share(x, rng, bound))

    @property
    def shape(self):
        return self.p0.shape

    @property
    def value_id(self):
        return self.p0.value_id

    def reveal(self):
        return reconstruct(self.p0, self.p1)

    def _map(self, fn, *args):
        return SharedPair(fn(self.p0, *args), fn(self.p1, *args))

    def add_public(self, a):
        return self._map(add_public, a)

    def mul_public(self, a):
        return self._map(mul_public, a)

    def __add__(self, other):
        return SharedPair(add_shared(self.p0, other.p0), add_shared(self.p1, other.p1))

    def __sub__(self, other):
        return SharedPair(sub_shared(self.p0, other.p0), sub_shared(self.p1, other.p1))

    def __neg__(self):
        return self.mul_public(-1.0)

    @property
    def T(self):
        return self._map(lambda h: h.derived("T", h.share.T.copy()))

    def sum_rows(self, keepdims=True):
        return self._map(lambda h: h.derived("sum_rows", h.share.sum(axis=0, keepdims=keepdims)))

    def add_row(self, row):
        """Broadcast-add a shared ``1 x n`` row to every row of ``self``."""
        return SharedPair(*(h.derived("add_row", h.share + r.share, r.value_id)
                            for h, r in ((self.p0, row.p0), (self.p1, row.p1))))

    def mul(self, other, dealer):
        return beaver_mul_pair(self, other, dealer.triple(self.shape, other.shape, MulKind.ELEMENTWISE))

    def matmul(self, other, dealer):
        return beaver_mul_pair(self, other, dealer.triple(self.shape, other.shape, MulKind.MATMUL))
