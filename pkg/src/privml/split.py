"""Split learning: a shared first layer feeding a tail network at a third party.

The data holders P0/P1 hold ``x``, ``W`` and ``b`` as shares and compute
``z = xW + b`` with Beaver triples. ``z`` is reconstructed only at the tail,
which runs the remaining layers, updates its own weights and returns
``dL/dz`` to the holders, again as shares. The holders finish the chain rule
under sharing.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ProtocolError, ShapeError
from .nonlinear import NONLINEAR
from .sharing import DEFAULT_MASK_BOUND, Role, SharedPair, TrustedDealer
from .tensor import Rng, rng_uniform

__all__ = [
    "DenseHead",
    "LocalHead",
    "SplitSession",
    "ThirdPartyTail",
    "head_backward",
    "head_forward",
    "init_dense",
    "tail_forward_backward",
    "vertical_backward",
    "vertical_head_forward",
]

DEFAULT_LR = 0.1
DEFAULT_HIDDEN = 64


def init_dense(rng, d, h):
    """``W`` uniform on ``[-1/sqrt(d), 1/sqrt(d))`` and zero bias row."""
    lim = 1.0 / math.sqrt(d)
    return rng_uniform(rng, (d, h), -lim, lim), np.zeros((1, h))


def _bce(p, y):
    eps = 1e-12
    return float(-np.sum(y * np.log(p + eps) + (1.0 - y) * np.log(1.0 - p + eps)) / y.shape[0])


class ThirdPartyTail:
    """Upper network owned by the tail party: act(z) -> dense -> sigmoid -> BCE.

    The loss is binary cross-entropy summed over outputs and averaged over
    the batch, so ``dL/dlogits = (p - y) / batch``.
    """

    def __init__(self, hidden, n_out, rng=None, lr=DEFAULT_LR, activation="sigmoid", bound=DEFAULT_MASK_BOUND):
        rng = rng if rng is not None else Rng(0)
        self.W, self.b = init_dense(rng.child("tail.init"), hidden, n_out)
        self.lr = lr
        self.act = NONLINEAR[activation]
        self.act_prime = NONLINEAR[f"{activation}_prime"]
        self.bound = bound
        self._share_rng = rng.child("tail.share")
        self.seen = []  # every plaintext hidden batch received
        self.cache = None

    def receive_hidden(self, z0, z1, round_tag=None):
        if np.shape(z0) != np.shape(z1):
            raise ShapeError("receive_hidden", np.shape(z0), np.shape(z1))
        z = np.asarray(z0) + np.asarray(z1)
        self.seen.append(z)
        self.cache = (round_tag, z)
        return z

    def forward(self, z):
        a = self.act(z)
        return a, NONLINEAR["sigmoid"](a @ self.W + self.b)

    def predict_proba(self, z):
        return self.forward(z)[1]

    def gradients(self, z, labels):
        """Loss, ``dL/dz`` and parameter gradients; no update."""
        z = np.asarray(z, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.W.shape[0]:
            raise ShapeError("tail forward", z.shape, self.W.shape)
        if labels.shape != (z.shape[0], self.W.shape[1]):
            raise ShapeError("tail labels", labels.shape, (z.shape[0], self.W.shape[1]))
        a, p = self.forward(z)
        loss = _bce(p, labels)
        dlogits = (p - labels) / z.shape[0]
        grads = {"W": a.T @ dlogits, "b": dlogits.sum(axis=0, keepdims=True)}
        dz = (dlogits @ self.W.T) * self.act_prime(z)
        return loss, dz, grads

    def step(self, z, labels):
        loss, dz, grads = self.gradients(z, labels)
        self.W = self.W - self.lr * grads["W"]
        self.b = self.b - self.lr * grads["b"]
        return loss, dz

    def share_grad(self, dz, round_tag):
        return SharedPair.of(dz, self._share_rng.child("dz", round_tag), self.bound)

    def loss(self, z, labels):
        return _bce(self.predict_proba(z), np.asarray(labels, dtype=np.float64))


@dataclass
class LocalHead:
    """First layer held as shares by P0/P1."""

    W: SharedPair
    b: SharedPair
    lr: float = DEFAULT_LR

    @classmethod
    def from_plain(cls, W, b, rng, lr=DEFAULT_LR, bound=DEFAULT_MASK_BOUND):
        return cls(SharedPair.of(W, rng, bound), SharedPair.of(b, rng, bound), lr)

    def reveal(self):
        return self.W.reveal(), self.b.reveal()


@dataclass
class DenseHead:
    """Plaintext first layer, for local training and the vertical variant."""

    W: np.ndarray
    b: np.ndarray
    lr: float = DEFAULT_LR

    def forward(self, x):
        return np.asarray(x) @ self.W + self.b

    def gradients(self, x, dz):
        return {"W": np.asarray(x).T @ dz, "b": dz.sum(axis=0, keepdims=True)}

    def backward(self, x, dz):
        g = self.gradients(x, dz)
        self.W = self.W - self.lr * g["W"]
        self.b = self.b - self.lr * g["b"]
        return g


def head_forward(x, head, dealer, tail, round_tag=None, observed=None):
    """Compute ``xW + b`` under sharing and reconstruct it at ``tail`` only."""
    if dealer is None:
        raise ProtocolError("head_forward needs a triple dealer")
    z = x.matmul(head.W, dealer).add_row(head.b)
    if observed is not None:
        observed[Role.P0].append(z.p0.share)
        observed[Role.P1].append(z.p1.share)
    tail.receive_hidden(z.p0.share, z.p1.share, round_tag)
    return round_tag


def tail_forward_backward(tail, labels, round_tag=None):
    """Tail step on the cached hidden batch: returns ``(loss, dL/dz)``, updates the tail."""
    if tail.cache is None:
        raise ProtocolError("tail has no cached hidden output")
    tag, z = tail.cache
    if round_tag is not None and tag != round_tag:
        raise ProtocolError(f"stale round: cached {tag!r}, asked {round_tag!r}")
    tail.cache = None
    return tail.step(z, labels)


def head_gradients(dz, x, dealer):
    """Shared ``dW = x^T dz`` and ``db = colsum(dz)``."""
    return x.T.matmul(dz, dealer), dz.sum_rows()


def head_backward(dz, x, head, dealer):
    """SGD update of the shared head from shared ``dL/dz``."""
    if dz.shape[0] != x.shape[0] or dz.shape[1] != head.W.shape[1]:
        raise ShapeError("head_backward", dz.shape, x.shape, head.W.shape)
    dW, db = head_gradients(dz, x, dealer)
    head.W = head.W - dW.mul_public(head.lr)
    head.b = head.b - db.mul_public(head.lr)
    return dW, db


def vertical_head_forward(heads, x_parts, tail=None):
    """Each holder computes its hidden output in plaintext; the tail sums them."""
    if len(heads) != len(x_parts) or not heads:
        raise ValueError("need one feature block per head")
    outs = [h.forward(x) for h, x in zip(heads, x_parts)]
    z = outs[0]
    for o in outs[1:]:
        if o.shape != z.shape:
            raise ShapeError("vertical_head_forward", z.shape, o.shape)
        z = z + o
    if tail is not None:
        tail.seen.append(z)
        tail.cache = (None, z)
    return z


def vertical_backward(heads, x_parts, dz):
    """Fan ``dL/dz`` to every holder; each updates its own block."""
    return [h.backward(x, dz) for h, x in zip(heads, x_parts)]


@dataclass
class SplitSession:
    """In-process split-learning run: shared head, dealer and tail in one place.

    ``observed`` records, per computing party, every hidden-side tensor it
    held, so tests can check that no party ever sees plaintext ``z``.
    """

    head: LocalHead
    tail: ThirdPartyTail
    dealer: TrustedDealer
    rng: Rng
    bound: float = DEFAULT_MASK_BOUND
    rounds: int = 0
    observed: dict = field(default_factory=lambda: {Role.P0: [], Role.P1: []})

    @classmethod
    def create(cls, d, hidden, n_out, seed=0, lr=DEFAULT_LR, bound=DEFAULT_MASK_BOUND, activation="sigmoid"):
        rng = Rng(seed)
        W, b = init_dense(rng.child("head.init"), d, hidden)
        head = LocalHead.from_plain(W, b, rng.child("head.share"), lr, bound)
        tail = ThirdPartyTail(hidden, n_out, rng.child("tail"), lr, activation, bound)
        return cls(head, tail, TrustedDealer(rng.child("dealer").seed, bound), rng.child("data"), bound)

    def share_batch(self, x):
        return SharedPair.of(x, self.rng.child("x", self.rounds), self.bound)

    def step(self, x, labels):
        """One training step; ``x`` may be plaintext (shared here) or a SharedPair."""
        xs = x if isinstance(x, SharedPair) else self.share_batch(x)
        tag = self.rounds
        self.rounds += 1
        head_forward(xs, self.head, self.dealer, self.tail, tag, self.observed)
        loss, dz = tail_forward_backward(self.tail, labels, tag)
        dz_shared = self.tail.share_grad(dz, tag)
        self.observed[Role.P0].append(dz_shared.p0.share)
        self.observed[Role.P1].append(dz_shared.p1.share)
        head_backward(dz_shared, xs, self.head, self.dealer)
        return loss
