"""Coordinator: drives parties through remote-tensor keys.

It never holds both halves of a private value unless it explicitly
reveals one. Helpers issue the same expression template to P0 and P1,
with ``{name}`` placeholders filled per party. Shared values fill in each
party's own key; tensors go in inline; plain keys and numbers are copied.
"""

import itertools
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import PrivmlError, ProtocolError
from ..sharing import DEFAULT_MASK_BOUND, MulKind, share
from ..tensor import Rng
from .expr import Expression, format_arg
from .party import COMPUTE_ROLES, PartyRole, RemoteTensorKey
from .wire import Frame, MsgType


@dataclass(frozen=True)
class RemoteShared:
    """A shared value as a pair of keys: P0's share and P1's share."""

    k0: RemoteTensorKey
    k1: RemoteTensorKey

    def at(self, role):
        return self.k0 if PartyRole.parse(role) is PartyRole.P0 else self.k1


class ParallelError(PrivmlError):
    """At least one call in :meth:`Coordinator.parallel` failed."""

    def __init__(self, results):
        self.results = results
        failed = [(i, r) for i, r in enumerate(results) if isinstance(r, BaseException)]
        super().__init__(f"{len(failed)} of {len(results)} calls failed; first: {failed[0][1]!r}")


class Coordinator:
    def __init__(self, transport, seed=0, mask_bound=DEFAULT_MASK_BOUND, max_workers=16):
        self.transport = transport
        self.mask_bound = mask_bound
        self.rng = Rng(seed).child("Coordinator")
        self._rounds = itertools.count()
        self._shares = itertools.count()
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers, thread_name_prefix="coord")
        # pair halves block on each other, so they get their own pool
        self._pair_pool = ThreadPoolExecutor(4 * max_workers, thread_name_prefix="coord-pair")

    def close(self):
        self._pool.shutdown(wait=False)
        self._pair_pool.shutdown(wait=False)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def next_round(self, label="r"):
        with self._lock:
            return f"{label}{next(self._rounds)}"

    # -- primitives ------------------------------------------------------

    def store(self, party, t):
        party = PartyRole.parse(party)
        reply = self.transport.request(party, Frame(MsgType.STORE, {"tensor": np.asarray(t, dtype=np.float64)}))
        return RemoteTensorKey(party, reply["key"])

    def exec(self, party, expr, round=None):
        party = PartyRole.parse(party)
        round = self.next_round("x") if round is None else round
        text = str(expr) if isinstance(expr, Expression) else expr
        reply = self.transport.request(party, Frame(MsgType.EXEC, {"expr": text, "round": round}))
        return RemoteTensorKey(party, reply["key"])

    def fetch(self, key):
        return self.transport.request(key.party, Frame(MsgType.FETCH, {"key": key.key}))["tensor"]

    def free(self, key):
        self.transport.request(key.party, Frame(MsgType.FREE, {"key": key.key}))

    def parallel(self, calls, return_exceptions=False):
        """Run independent calls concurrently; results come back in input order.

        Each call is a zero-argument callable or a ``(fn, *args)`` tuple.
        Failures are returned in place when ``return_exceptions`` is set,
        otherwise a :class:`ParallelError` carrying every result is raised.
        """
        calls = [c if callable(c) else (lambda c=c: c[0](*c[1:])) for c in calls]
        futures = [self._pool.submit(c) for c in calls]
        results = []
        for f in futures:
            try:
                results.append(f.result())
            except Exception as exc:
                results.append(exc)
        if not return_exceptions and any(isinstance(r, Exception) for r in results):
            raise ParallelError(results)
        return results

    # -- shared values ---------------------------------------------------

    def _pair(self, fn0, fn1):
        f0 = self._pair_pool.submit(fn0)
        f1 = self._pair_pool.submit(fn1)
        errors = []
        out = []
        for f in (f0, f1):
            try:
                out.append(f.result())
            except Exception as exc:
                errors.append(exc)
        if errors:
            raise errors[0]
        return out

    def share(self, x):
        """Split a tensor this coordinator holds and store one share at each party."""
        with self._lock:
            rng = self.rng.child("share", next(self._shares))
        h0, h1 = share(x, rng, self.mask_bound)
        k0, k1 = self._pair(lambda: self.store(PartyRole.P0, h0.share),
                            lambda: self.store(PartyRole.P1, h1.share))
        return RemoteShared(k0, k1)

    def render(self, template, role, named):
        subs = {}
        for name, value in named.items():
            if isinstance(value, RemoteShared):
                subs[name] = f"k:{value.at(role).key}"
            elif isinstance(value, RemoteTensorKey):
                subs[name] = f"k:{value.key}"
            else:
                subs[name] = format_arg(value)
        return template.format(**subs)

    def exec_shared(self, template, round=None, **named):
        """Run ``template`` at P0 and P1 concurrently under one round tag.

        Pass ``round`` (from :meth:`next_round`) when issuing calls from
        several threads so tags do not depend on scheduling.
        """
        round = self.next_round("s") if round is None else round
        e0, e1 = (self.render(template, r, named) for r in COMPUTE_ROLES)
        k0, k1 = self._pair(lambda: self.exec(PartyRole.P0, e0, round),
                            lambda: self.exec(PartyRole.P1, e1, round))
        return RemoteShared(k0, k1)

    def triple(self, x_shape, y_shape, kind=MulKind.MATMUL, round=None):
        round = self.next_round("t") if round is None else round
        reply = self.transport.request(PartyRole.DEALER, Frame(MsgType.TRIPLE_REQ, {
            "kind": MulKind(kind).value, "x_shape": list(x_shape), "y_shape": list(y_shape), "round": round}))
        if reply.get("triple") != round:
            raise ProtocolError(f"dealer answered for {reply.get('triple')!r}, asked {round!r}")
        return RemoteShared(RemoteTensorKey(PartyRole.P0, reply["p0"]), RemoteTensorKey(PartyRole.P1, reply["p1"]))

    def reveal(self, shared):
        s0, s1 = self._pair(lambda: self.fetch(shared.k0), lambda: self.fetch(shared.k1))
        return s0 + s1

    def free_shared(self, *shared):
        for s in shared:
            self._pair(lambda s=s: self.free(s.k0), lambda s=s: self.free(s.k1))


__all__ = ["Coordinator", "ParallelError", "RemoteShared"]
