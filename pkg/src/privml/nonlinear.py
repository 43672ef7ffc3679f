"""Element-wise nonlinear functions on shared vectors via a random permutation.

Both computing parties permute their shares with the same seed-derived
permutation and send them to a semi-honest evaluator (P3). P3 adds the two
shares, sees only the shuffled plaintext, applies the requested functions,
re-shares every result with fresh masks and hands one share back to each
party. The parties undo the permutation locally.
"""

from dataclasses import dataclass

import numpy as np

from ._sync import Rendezvous
from .errors import ProtocolError, ShapeError
from .sharing import DEFAULT_MASK_BOUND, Role, ShareHandle, SharedPair, derive_id, share
from .tensor import Rng, rng_normal

__all__ = [
    "NONLINEAR",
    "NonlinearFn",
    "Permutation",
    "ThirdPartyEvaluator",
    "add_local_noise",
    "apply_inverse",
    "apply_perm",
    "eval_nonlinear",
    "permutation_from_seed",
    "permute_share",
    "unpermute_share",
]


@dataclass(frozen=True, eq=False)
class Permutation:
    """``apply`` sends ``x`` to ``x[forward]``; ``inverse`` undoes it."""

    n: int
    forward: np.ndarray
    seed: int

    @property
    def inverse(self):
        inv = np.empty_like(self.forward)
        inv[self.forward] = np.arange(self.n)
        return inv


def permutation_from_seed(seed, n):
    """Fisher-Yates shuffle of ``0..n-1`` driven by ``Rng(seed)``.

    For ``i = n-1 .. 1`` swap positions ``i`` and ``j``, where ``j`` is the
    next draw ``d`` mapped to ``[0, i]`` as ``(d * (i + 1)) >> 64``.
    """
    if n < 1:
        raise ValueError("permutation length must be >= 1")
    forward = list(range(n))
    draws = Rng(seed).raw(n - 1).tolist()
    for k, i in enumerate(range(n - 1, 0, -1)):
        j = (draws[k] * (i + 1)) >> 64
        forward[i], forward[j] = forward[j], forward[i]
    return Permutation(n, np.asarray(forward, dtype=np.int64), int(seed))


def _flat(p, x):
    x = np.asarray(x, dtype=np.float64)
    if x.size != p.n:
        raise ShapeError("permutation", (p.n,), x.shape)
    return x.reshape(-1)


def apply_perm(p, x):
    return _flat(p, x)[p.forward]


def apply_inverse(p, x):
    out = np.empty(p.n)
    out[p.forward] = _flat(p, x)
    return out


def add_local_noise(x, sigma, rng=None):
    """Add i.i.d. ``N(0, sigma^2)`` noise; ``sigma == 0`` returns ``x`` unchanged."""
    x = np.asarray(x, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return x
    if rng is None:
        rng = Rng(0)
    return x + rng_normal(rng, x.shape, 0.0, sigma)


# -- element-wise functions --------------------------------------------------


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _sigmoid_prime(z):
    s = _sigmoid(z)
    return s * (1.0 - s)


@dataclass(frozen=True)
class NonlinearFn:
    name: str
    fn: object
    formula: str

    def __call__(self, z):
        return self.fn(np.asarray(z, dtype=np.float64))


NONLINEAR = {
    f.name: f
    for f in (
        NonlinearFn("sigmoid", _sigmoid, "1 / (1 + exp(-z))"),
        NonlinearFn("sigmoid_prime", _sigmoid_prime, "s(z) * (1 - s(z))"),
        NonlinearFn("relu", lambda z: np.maximum(z, 0.0), "max(z, 0)"),
        NonlinearFn("relu_prime", lambda z: (z > 0).astype(np.float64), "1 if z > 0 else 0"),
    )
}


def resolve_fns(fns):
    if isinstance(fns, str):
        fns = fns.split(",")
    out = []
    for name in fns:
        name = getattr(name, "name", name).strip()
        if name == "softmax":
            raise ValueError("softmax is not element-wise and cannot be evaluated under permutation")
        if name not in NONLINEAR:
            raise ValueError(f"unknown nonlinear function {name!r}")
        out.append(NONLINEAR[name])
    return out


# -- party-local steps -------------------------------------------------------


def permute_share(h, perm):
    return h.derived("perm", apply_perm(perm, h.share), perm.seed)


def unpermute_share(h, perm, shape):
    return h.derived("unperm", apply_inverse(perm, h.share).reshape(shape), perm.seed)


class ThirdPartyEvaluator:
    """The P3 role. Stateless between calls apart from the optional transcript.

    ``evaluate`` is the direct form used when one caller holds both shares;
    ``submit`` is the per-party form: each computing party calls it with its
    own permuted share and blocks until the peer's share for the same tag
    arrives.
    """

    def __init__(self, seed=0, bound=DEFAULT_MASK_BOUND, record=False, timeout=30.0):
        self._rng = Rng(seed)
        self.bound = bound
        self.record = record
        self.transcript = []
        self._meeting = Rendezvous((Role.P0, Role.P1), timeout)

    def evaluate(self, fns, x0, x1, tag):
        fns = resolve_fns(fns)
        x0 = np.asarray(x0, dtype=np.float64)
        x1 = np.asarray(x1, dtype=np.float64)
        if x0.shape != x1.shape:
            raise ShapeError("eval_fn", x0.shape, x1.shape)
        xp = x0 + x1
        if self.record:
            self.transcript.append((tag, xp.copy()))
        rng = self._rng.child("eval", tag)
        vid = derive_id("eval", tag)
        return [share(f(xp), rng, self.bound, value_id=f"{vid}.{f.name}") for f in fns]

    def submit(self, role, tag, fns, permuted_share):
        def compute(got):
            results = self.evaluate(got[Role.P0][0], got[Role.P0][1], got[Role.P1][1], tag)
            return {r: [pair[i].share for pair in results] for i, r in enumerate((Role.P0, Role.P1))}

        return self._meeting.meet(str(tag), Role(role), (fns, permuted_share), compute)


def eval_nonlinear(h0, h1, fn, seed, p3, tag=None, noise_sigma=0.0):
    """Shares of ``fn(x)`` from shares of ``x``, via the permuted reveal to ``p3``.

    ``fn`` may name one function or several (``"sigmoid,sigmoid_prime"``);
    several are computed in the same P3 round and returned as a list.
    """
    if p3 is None:
        raise ProtocolError("no third party available for eval_nonlinear")
    if h0.value_id != h1.value_id or h0.shape != h1.shape:
        raise ShapeError("eval_nonlinear", h0.shape, h1.shape)
    single = isinstance(fn, (str, NonlinearFn)) and "," not in getattr(fn, "name", fn)
    fns = resolve_fns([fn] if isinstance(fn, NonlinearFn) else fn)
    shape = h0.shape
    perm = permutation_from_seed(seed, h0.share.size)
    s0, s1 = permute_share(h0, perm).share, permute_share(h1, perm).share
    if noise_sigma:
        s0 = add_local_noise(s0, noise_sigma, Rng(seed).child("noise"))
    if tag is None:
        tag = derive_id("round", h0.value_id, seed)
    results = p3.evaluate(fns, s0, s1, tag)
    out = []
    for f, (r0, r1) in zip(fns, results):
        out.append(SharedPair(
            unpermute_share(ShareHandle(Role.P0, f"{h0.value_id}.{f.name}", r0.share), perm, shape),
            unpermute_share(ShareHandle(Role.P1, f"{h0.value_id}.{f.name}", r1.share), perm, shape),
        ))
    return out[0] if single else out
