"""A party: a keyed tensor store plus an executor for coordinator requests.

Every party answers STORE, FETCH, FREE and EXEC. Role-specific duties:

* P0/P1 run the sharing protocols inside EXEC (``beaver``, ``eval_fn``,
  ``hidden_fwd``), talking to their peer, P3 and the tail directly.
* P3 answers EVAL_FN with SHARE_BACK.
* Dealer answers TRIPLE_REQ, pushing triple halves straight to P0 and P1.
* Tail answers HIDDEN_FWD with GRAD_BACK and owns the upper network.
"""

import enum
import itertools
import logging
import threading
from dataclasses import dataclass

import numpy as np

from .._sync import Mailbox, Rendezvous
from ..errors import PrivmlError, ProtocolError, ShapeError
from ..nonlinear import ThirdPartyEvaluator, permutation_from_seed, permute_share, unpermute_share
from ..sharing import (
    DEFAULT_MASK_BOUND,
    MulKind,
    Role,
    ShareHandle,
    TripleShare,
    beaver_mul,
    dealer_make_triple,
)
from ..split import ThirdPartyTail
from ..tensor import Rng
from .expr import Expression, Key, Symbol, parse
from .wire import Frame, MsgType, ack, nack

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0


class PartyRole(str, enum.Enum):
    P0 = "P0"
    P1 = "P1"
    P3 = "P3"
    DEALER = "Dealer"
    TAIL = "Tail"
    COORDINATOR = "Coordinator"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        aliases = {"P3_nonlinear": "P3", "dealer": "Dealer", "tail": "Tail", "coordinator": "Coordinator"}
        return cls(aliases.get(name, name))

    @property
    def index(self):
        return list(PartyRole).index(self)


COMPUTE_ROLES = (PartyRole.P0, PartyRole.P1)


@dataclass(frozen=True)
class RemoteTensorKey:
    party: PartyRole
    key: int

    def __str__(self):
        return f"{self.party.value}/k:{self.key}"


class TensorStore:
    """Thread-safe id -> value map. Keys carry the owning role in the top byte."""

    def __init__(self, role):
        self._prefix = PartyRole.parse(role).index << 56
        self._ids = itertools.count(1)
        self._items = {}
        self._lock = threading.Lock()

    def put(self, value):
        with self._lock:
            key = self._prefix | next(self._ids)
            self._items[key] = value
        return key

    def get(self, key):
        with self._lock:
            try:
                return self._items[key]
            except KeyError:
                raise KeyError(f"unknown key k:{key}") from None

    def free(self, key):
        with self._lock:
            if self._items.pop(key, None) is None:
                raise KeyError(f"unknown key k:{key}")

    def __len__(self):
        return len(self._items)


class _PeerChannel:
    """Beaver openings between P0 and P1, pushed as STORE-to-mailbox frames."""

    def __init__(self, party):
        self.party = party

    def exchange(self, tag, payload):
        tag = "|".join(str(t) for t in tag)
        peer = PartyRole.P1 if self.party.role is PartyRole.P0 else PartyRole.P0
        self.party.transport.request(peer, Frame(MsgType.STORE, {"mailbox": tag, "tensors": list(payload)}))
        return self.party.mailbox.take(tag)


class _ExecContext:
    def __init__(self, round_tag):
        self.round = round_tag
        self._n = itertools.count()

    def subtag(self):
        return f"{self.round}/{next(self._n)}"


class Party:
    """Request handler for one role. Transport-agnostic: ``handle`` maps a frame to a reply."""

    def __init__(self, role, transport=None, seed=0, mask_bound=DEFAULT_MASK_BOUND,
                 timeout=DEFAULT_TIMEOUT, record=False):
        self.role = PartyRole.parse(role)
        self.transport = transport
        self.mask_bound = mask_bound
        self.timeout = timeout
        self.rng = Rng(seed).child(self.role.value)
        self.store = TensorStore(self.role)
        self.mailbox = Mailbox(timeout)
        self.record = record
        self.transcript = []  # plaintext tensors this party saw from others, when record=True
        self.evaluator = None
        self.tail = None
        self._tail_meeting = None
        self._exec_locks = {}
        self._exec_guard = threading.Lock()
        if self.role is PartyRole.P3:
            self.evaluator = ThirdPartyEvaluator(self.rng.seed, mask_bound, record, timeout)
        if self.role is PartyRole.TAIL:
            self._tail_meeting = Rendezvous((Role.P0, Role.P1), timeout)
        self._handlers = {
            MsgType.STORE: self._on_store,
            MsgType.FETCH: self._on_fetch,
            MsgType.FREE: self._on_free,
            MsgType.EXEC: self._on_exec,
            MsgType.EVAL_FN: self._on_eval_fn,
            MsgType.TRIPLE_REQ: self._on_triple_req,
            MsgType.HIDDEN_FWD: self._on_hidden_fwd,
        }

    def __repr__(self):
        return f"Party({self.role.value}, {len(self.store)} stored)"

    @property
    def share_role(self):
        if self.role not in COMPUTE_ROLES:
            raise ProtocolError(f"{self.role.value} holds no shares")
        return Role(self.role.value)

    def handle(self, frame):
        handler = self._handlers.get(frame.type)
        if handler is None:
            return nack(f"{self.role.value} does not accept {frame.type.name}")
        try:
            return handler(frame)
        except KeyError as exc:
            return nack(exc.args[0] if exc.args else "unknown key")
        except (PrivmlError, ValueError, TypeError, ArithmeticError) as exc:
            log.debug("%s rejected %s: %s", self.role.value, frame.type.name, exc)
            return nack(f"{type(exc).__name__}: {exc}")

    # -- generic messages ------------------------------------------------

    def _on_store(self, frame):
        if "mailbox" in frame.fields:
            self.mailbox.deliver(frame["mailbox"], frame["tensors"])
            return ack()
        if "triple" in frame.fields:
            half = TripleShare(self.share_role, frame["triple"], MulKind(frame["kind"]),
                               frame["u"], frame["v"], frame["w"])
            return ack(key=self.store.put(half))
        t = frame["tensor"]
        if not isinstance(t, np.ndarray):
            raise TypeError("STORE needs a tensor")
        return ack(key=self.store.put(t))

    def _on_fetch(self, frame):
        value = self.store.get(frame["key"])
        if not isinstance(value, np.ndarray):
            raise TypeError(f"k:{frame['key']} is not a tensor")
        return ack(tensor=value)

    def _on_free(self, frame):
        self.store.free(frame["key"])
        return ack()

    def _on_exec(self, frame):
        text = frame["expr"]
        expr = parse(text) if isinstance(text, str) else text
        round_tag = str(frame.get("round", ""))
        lock = self._round_lock(round_tag)
        with lock:
            result = self.evaluate(expr, _ExecContext(round_tag))
        if not isinstance(result, np.ndarray):
            result = np.asarray(result, dtype=np.float64)
        return ack(key=self.store.put(result))

    def _round_lock(self, round_tag):
        # EXECs sharing a round tag run one at a time; distinct rounds run in parallel.
        if not round_tag:
            return threading.Lock()
        with self._exec_guard:
            return self._exec_locks.setdefault(round_tag, threading.Lock())

    # -- expression evaluation -------------------------------------------

    def evaluate(self, expr, ctx):
        op = _OPS.get(expr.op)
        if op is None:
            raise ValueError(f"unknown op {expr.op!r}")
        args = []
        for a in expr.args:
            if isinstance(a, Expression):
                args.append(self.evaluate(a, ctx))
            elif isinstance(a, Key):
                args.append(self.store.get(a.id))
            elif isinstance(a, Symbol):
                args.append(a.name)
            else:
                args.append(a)
        return op(self, ctx, *args)

    # -- role messages ---------------------------------------------------

    def _on_eval_fn(self, frame):
        if self.evaluator is None:
            raise ProtocolError(f"{self.role.value} is not the nonlinear evaluator")
        shares = self.evaluator.submit(frame["role"], frame["round"], frame["fn"], frame["share"])
        return Frame(MsgType.SHARE_BACK, {"round": frame["round"], "shares": shares})

    def _on_triple_req(self, frame):
        if self.role is not PartyRole.DEALER:
            raise ProtocolError(f"{self.role.value} does not deal triples")
        tag = str(frame["round"])
        triple = dealer_make_triple(tuple(frame["x_shape"]), tuple(frame["y_shape"]), frame["kind"],
                                    self.rng.child("triple", tag), self.mask_bound, triple_id=tag)
        keys = {}
        for role in COMPUTE_ROLES:
            half = triple.half(role.value)
            reply = self.transport.request(role, Frame(MsgType.STORE, {
                "triple": triple.triple_id, "kind": triple.kind.value,
                "u": half.u, "v": half.v, "w": half.w}))
            keys[role.value.lower()] = reply["key"]
        return ack(triple=triple.triple_id, **keys)

    def _on_hidden_fwd(self, frame):
        if self.tail is None:
            raise ProtocolError(f"{self.role.value} has no tail model")
        tag = str(frame["round"])
        labels = self.store.get(frame["labels"])

        def compute(got):
            z = self.tail.receive_hidden(got[Role.P0], got[Role.P1], tag)
            if self.record:
                self.transcript.append(("hidden", tag, z))
            loss, dz = self.tail.step(z, labels)
            dz_shared = self.tail.share_grad(dz, tag)
            return {Role.P0: (loss, dz_shared.p0.share), Role.P1: (loss, dz_shared.p1.share)}

        loss, dz_share = self._tail_meeting.meet(tag, Role(frame["role"]), frame["share"], compute)
        return Frame(MsgType.GRAD_BACK, {"round": tag, "share": dz_share, "loss": loss})


# -- op table ----------------------------------------------------------------


def _tensor(x, op):
    if not isinstance(x, np.ndarray):
        if isinstance(x, (int, float)):
            return np.asarray(float(x))
        raise TypeError(f"{op}: expected a tensor, got {type(x).__name__}")
    return x


def _same(op, a, b):
    a, b = _tensor(a, op), _tensor(b, op)
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)
    return a, b


def _op_add(p, ctx, a, b):
    a, b = _same("add", a, b)
    return a + b


def _op_sub(p, ctx, a, b):
    a, b = _same("sub", a, b)
    return a - b


def _op_mul(p, ctx, a, b):
    a, b = _same("mul", a, b)
    return a * b


def _op_matmul(p, ctx, a, b):
    a, b = _tensor(a, "matmul"), _tensor(b, "matmul")
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return a @ b


def _op_add_row(p, ctx, a, row):
    a, row = _tensor(a, "add_row"), _tensor(row, "add_row")
    if a.ndim != 2 or row.shape != (1, a.shape[1]):
        raise ShapeError("add_row", a.shape, row.shape)
    return a + row


def _op_rows(p, ctx, a, idx):
    a = _tensor(a, "rows")
    idx = np.asarray(idx).astype(np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError("rows", a.shape, idx.shape)
    return a[idx]


def _op_take(p, ctx, a, i):
    return np.ascontiguousarray(_tensor(a, "take")[int(i)])


def _op_add_public(p, ctx, a, pub):
    a, pub = _same("add_public", a, pub)
    return a + pub / 2.0


def _op_beaver(p, ctx, x, y, triple):
    if not isinstance(triple, TripleShare):
        raise TypeError("beaver: third argument must be a triple key")
    role = p.share_role
    tag = ctx.subtag()
    hx = ShareHandle(role, f"{tag}.x", _tensor(x, "beaver"))
    hy = ShareHandle(role, f"{tag}.y", _tensor(y, "beaver"))
    out = beaver_mul(hx, hy, triple, _PeerChannel(p))
    if p.record:
        p.transcript.append(("beaver", tag, triple.triple_id))
    return out.share


def _op_eval_fn(p, ctx, fns, seed, x):
    role = p.share_role
    x = _tensor(x, "eval_fn")
    tag = ctx.subtag()
    perm = permutation_from_seed(int(seed), x.size)
    h = permute_share(ShareHandle(role, tag, x), perm)
    reply = p.transport.request(PartyRole.P3, Frame(MsgType.EVAL_FN, {
        "fn": fns, "round": tag, "share": h.share, "role": role.value}))
    if reply.get("round") != tag:
        raise ProtocolError(f"SHARE_BACK for {reply.get('round')!r}, expected {tag!r}")
    outs = [unpermute_share(ShareHandle(role, tag, s), perm, x.shape).share for s in reply["shares"]]
    return np.stack(outs)


def _op_hidden_fwd(p, ctx, z, labels_key):
    role = p.share_role
    tag = ctx.subtag()
    reply = p.transport.request(PartyRole.TAIL, Frame(MsgType.HIDDEN_FWD, {
        "round": tag, "share": _tensor(z, "hidden_fwd"), "labels": int(labels_key), "role": role.value}))
    if reply.type is not MsgType.GRAD_BACK or reply.get("round") != tag:
        raise ProtocolError(f"bad GRAD_BACK for round {tag!r}")
    return reply["share"]


def _op_tail_init(p, ctx, hidden, n_out, lr, activation="sigmoid", seed=None):
    if p.role is not PartyRole.TAIL:
        raise ProtocolError("tail_init outside the tail party")
    rng = p.rng.child("tail") if seed is None else Rng(int(seed))
    p.tail = ThirdPartyTail(int(hidden), int(n_out), rng, float(lr), str(activation), p.mask_bound)
    return np.zeros(())


def _op_tail_param(p, ctx, name):
    if p.tail is None:
        raise ProtocolError("no tail model")
    if name not in ("W", "b"):
        raise ValueError(f"unknown tail parameter {name!r}")
    return getattr(p.tail, name).copy()


_OPS = {
    "add": _op_add,
    "sub": _op_sub,
    "mul": _op_mul,
    "neg": lambda p, ctx, a: -_tensor(a, "neg"),
    "scale": lambda p, ctx, a, s: _tensor(a, "scale") * float(s),
    "matmul": _op_matmul,
    "T": lambda p, ctx, a: np.ascontiguousarray(_tensor(a, "T").T),
    "sum_rows": lambda p, ctx, a: _tensor(a, "sum_rows").sum(axis=0, keepdims=True),
    "add_row": _op_add_row,
    "rows": _op_rows,
    "take": _op_take,
    "copy": lambda p, ctx, a: _tensor(a, "copy").copy(),
    "add_public": _op_add_public,
    "mul_public": lambda p, ctx, a, pub: _tensor(a, "mul_public") * _tensor(pub, "mul_public"),
    "beaver": _op_beaver,
    "eval_fn": _op_eval_fn,
    "hidden_fwd": _op_hidden_fwd,
    "tail_init": _op_tail_init,
    "tail_param": _op_tail_param,
}

OPS = frozenset(_OPS)
