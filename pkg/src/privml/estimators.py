"""scikit-learn compatible classifiers trained locally or through the parties.

``mode="local"`` trains in plaintext in this process. ``mode="framework"``
shares the training data between P0 and P1 and runs every step through a
:class:`~privml.net.Coordinator`: products use dealer triples, sigmoid goes
through the permuted third party, and (for the MLP) the upper layers live at
the tail party. Both modes use the same initialisation, batch order and
checkpoint evaluation, so their learning curves are directly comparable.
"""

import time
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .net import Coordinator, PartyRole, local_deployment
from .net.expr import E, Key
from .nonlinear import NONLINEAR, permutation_from_seed
from .sharing import DEFAULT_MASK_BOUND, MulKind
from .split import DenseHead, ThirdPartyTail, init_dense
from .tensor import Rng

MODES = ("framework", "local")

_sigmoid = NONLINEAR["sigmoid"]


@dataclass(frozen=True)
class RunRecord:
    batch: int
    elapsed_s: float
    val_accuracy: float
    loss: float
    mode: str


def batch_schedule(n, batch_size, steps, seed):
    """Row indices for each step: consecutive slices of seeded per-epoch shuffles."""
    if batch_size > n:
        raise ValueError(f"batch size {batch_size} exceeds {n} samples")
    per_epoch = n // batch_size
    rng = Rng(seed)
    order = None
    for step in range(steps):
        epoch, pos = divmod(step, per_epoch)
        if pos == 0:
            order = permutation_from_seed(rng.child("epoch", epoch).seed, n).forward
        yield order[pos * batch_size:(pos + 1) * batch_size]


def _mse(p, y):
    return float(0.5 * np.sum((p - y) ** 2) / y.shape[0])


def _triples(coord, specs):
    # round tags are fixed before the parallel calls so dealer draws are reproducible
    rounds = [coord.next_round("t") for _ in specs]
    return coord.parallel([(coord.triple, *spec, r) for spec, r in zip(specs, rounds)])


def _both(coord, *calls):
    rounds = [coord.next_round("s") for _ in calls]
    return coord.parallel([lambda t=t, kw=kw, r=r: coord.exec_shared(t, round=r, **kw)
                           for (t, kw), r in zip(calls, rounds)])


class _PrivateTrainer(ClassifierMixin, BaseEstimator):
    """Shared plumbing: validation, label encoding, checkpoints and deployment."""

    def _prepare(self, X, y, X_val, y_val):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        self.n_features_in_ = X.shape[1]
        Y = self._encode(y)
        if X_val is None:
            Xv, Yv = X, Y
        else:
            Xv, yv = check_X_y(X_val, y_val, dtype=np.float64)
            Yv = self._encode(yv)
        return X, Y, Xv, Yv

    def _encode(self, y):
        idx = np.searchsorted(self.classes_, y)
        if np.any(idx >= len(self.classes_)) or np.any(self.classes_[np.minimum(idx, len(self.classes_) - 1)] != y):
            raise ValueError("labels not seen during fit")
        return np.eye(len(self.classes_))[idx]

    def _checkpoint(self, step, start, Xv, Yv, params):
        p = self._forward(Xv, params)
        acc = float(np.mean(p.argmax(axis=1) == Yv.argmax(axis=1)))
        rec = RunRecord(step, time.perf_counter() - start, acc, self._loss(p, Yv), self.mode)
        self.history_.append(rec)
        self.trajectory_.append((step, {k: v.copy() for k, v in params.items()}))

    def _deployment(self):
        if self.transport is not None:
            return self.transport, None
        transport = local_deployment(seed=self.random_state, mask_bound=self.mask_bound)
        return transport, transport

    def _fit(self, X, y, X_val, y_val):
        X, Y, Xv, Yv = self._prepare(X, y, X_val, y_val)
        self.history_ = []
        self.trajectory_ = []
        batches = batch_schedule(X.shape[0], self.batch_size, self.n_steps, Rng(self.random_state).child("batches").seed)
        if self.mode == "local":
            params = self._fit_local(X, Y, Xv, Yv, batches)
        else:
            transport, owned = self._deployment()
            coord = Coordinator(transport, seed=self.random_state, mask_bound=self.mask_bound)
            try:
                params = self._fit_framework(coord, X, Y, Xv, Yv, batches)
            finally:
                coord.close()
                if owned is not None:
                    owned.close()
        self.params_ = params
        return self

    def fit(self, X, y, X_val=None, y_val=None):
        return self._fit(X, y, X_val, y_val)

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        return self._forward(check_array(X, dtype=np.float64), self.params_)

    def predict_proba(self, X):
        p = self.decision_function(X)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[self.decision_function(X).argmax(axis=1)]


class SharedLogisticRegression(_PrivateTrainer):
    """One-vs-rest sigmoid regression ``sigmoid(xW + b)`` trained with MSE and SGD.

    Parameters
    ----------
    mode : {"framework", "local"}
        Train through the parties or in plaintext.
    n_steps : int
        Number of SGD batches.
    batch_size, learning_rate : int, float
    eval_every : int
        Record a :class:`RunRecord` every this many batches.
    random_state : int
        Seeds initialisation, batch order, permutations and the in-process
        deployment.
    mask_bound : float
        Share masks are uniform on ``[-mask_bound, mask_bound)``.
    transport : LocalTransport or TcpTransport, optional
        Parties to train with; a fresh in-process deployment when omitted.
    """

    def __init__(self, mode="framework", n_steps=1000, batch_size=32, learning_rate=0.1, eval_every=100,
                 random_state=0, mask_bound=DEFAULT_MASK_BOUND, transport=None):
        self.mode = mode
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.eval_every = eval_every
        self.random_state = random_state
        self.mask_bound = mask_bound
        self.transport = transport

    @property
    def coef_(self):
        check_is_fitted(self, "params_")
        return self.params_["W"].T

    @property
    def intercept_(self):
        check_is_fitted(self, "params_")
        return self.params_["b"].ravel()

    def _init(self, d, k):
        W, b = init_dense(Rng(self.random_state).child("init"), d, k)
        return {"W": W, "b": b}

    @staticmethod
    def _forward(X, params):
        return _sigmoid(X @ params["W"] + params["b"])

    @staticmethod
    def _loss(p, Y):
        return _mse(p, Y)

    def _fit_local(self, X, Y, Xv, Yv, batches):
        params = self._init(X.shape[1], Y.shape[1])
        W, b = params["W"], params["b"]
        c = self.learning_rate / self.batch_size
        start = time.perf_counter()
        for step, idx in enumerate(batches, 1):
            xb, yb = X[idx], Y[idx]
            z = xb @ W + b
            g = (_sigmoid(z) - yb) * NONLINEAR["sigmoid_prime"](z)
            W = W - (xb.T @ g) * c
            b = b - g.sum(axis=0, keepdims=True) * c
            if step % self.eval_every == 0:
                self._checkpoint(step, start, Xv, Yv, {"W": W, "b": b})
        return {"W": W, "b": b}

    def _fit_framework(self, coord, X, Y, Xv, Yv, batches):
        params = self._init(X.shape[1], Y.shape[1])
        d = X.shape[1]
        k = Y.shape[1]
        B = self.batch_size
        c = self.learning_rate / B
        perm_rng = Rng(self.random_state).child("perm")
        start = time.perf_counter()
        Xs, Ys, Ws, bs = (coord.share(a) for a in (X, Y, params["W"], params["b"]))
        for step, idx in enumerate(batches, 1):
            idx = idx.astype(np.float64)
            t1, t2, t3 = _triples(coord, [((B, d), (d, k), MulKind.MATMUL),
                                          ((B, k), (B, k), MulKind.ELEMENTWISE),
                                          ((d, B), (B, k), MulKind.MATMUL)])
            # sigmoid and its derivative of z = xW + b in one third-party round
            s = coord.exec_shared(
                '(eval_fn "sigmoid,sigmoid_prime" {seed} (add_row (beaver (rows {X} {idx}) {W} {t}) {b}))',
                seed=perm_rng.child(step).seed, X=Xs, idx=idx, W=Ws, b=bs, t=t1)
            g = coord.exec_shared("(beaver (sub (take {s} 0) (rows {Y} {idx})) (take {s} 1) {t})",
                                  s=s, Y=Ys, idx=idx, t=t2)
            W_new, b_new = _both(coord,
                                 ("(sub {W} (scale (beaver (T (rows {X} {idx})) {g} {t}) {c}))",
                                  dict(W=Ws, X=Xs, idx=idx, g=g, t=t3, c=c)),
                                 ("(sub {b} (scale (sum_rows {g}) {c}))", dict(b=bs, g=g, c=c)))
            coord.free_shared(s, g, Ws, bs, t1, t2, t3)
            Ws, bs = W_new, b_new
            if step % self.eval_every == 0:
                self._checkpoint(step, start, Xv, Yv, {"W": coord.reveal(Ws), "b": coord.reveal(bs)})
        return {"W": coord.reveal(Ws), "b": coord.reveal(bs)}


class SplitMLPClassifier(_PrivateTrainer):
    """One hidden layer: ``x -> xW + b`` under sharing, the rest at the tail party.

    The tail applies ``activation`` to the hidden layer, a dense layer and a
    sigmoid output, trained with cross-entropy. Parameters as for
    :class:`SharedLogisticRegression` plus ``hidden`` and ``activation``.
    """

    def __init__(self, mode="framework", hidden=64, activation="sigmoid", n_steps=1000, batch_size=32,
                 learning_rate=0.1, eval_every=100, random_state=0, mask_bound=DEFAULT_MASK_BOUND,
                 transport=None):
        self.mode = mode
        self.hidden = hidden
        self.activation = activation
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.eval_every = eval_every
        self.random_state = random_state
        self.mask_bound = mask_bound
        self.transport = transport

    def _tail_seed(self):
        return Rng(self.random_state).child("tail").seed

    def _forward(self, X, params):
        a = NONLINEAR[self.activation](X @ params["W1"] + params["b1"])
        return _sigmoid(a @ params["W2"] + params["b2"])

    @staticmethod
    def _loss(p, Y):
        eps = 1e-12
        return float(-np.sum(Y * np.log(p + eps) + (1 - Y) * np.log(1 - p + eps)) / Y.shape[0])

    def _init_head(self, d):
        return init_dense(Rng(self.random_state).child("init"), d, self.hidden)

    def _fit_local(self, X, Y, Xv, Yv, batches):
        head = DenseHead(*self._init_head(X.shape[1]), lr=self.learning_rate)
        tail = ThirdPartyTail(self.hidden, Y.shape[1], Rng(self._tail_seed()), self.learning_rate,
                              self.activation, self.mask_bound)
        start = time.perf_counter()
        for step, idx in enumerate(batches, 1):
            xb = X[idx]
            _, dz = tail.step(head.forward(xb), Y[idx])
            head.backward(xb, dz)
            if step % self.eval_every == 0:
                self._checkpoint(step, start, Xv, Yv, {"W1": head.W, "b1": head.b, "W2": tail.W, "b2": tail.b})
        return {"W1": head.W, "b1": head.b, "W2": tail.W, "b2": tail.b}

    def _tail_params(self, coord):
        out = {}
        for name in ("W", "b"):
            key = coord.exec(PartyRole.TAIL, E("tail_param", name))
            out[name + "2"] = coord.fetch(key)
            coord.free(key)
        return out

    def _fit_framework(self, coord, X, Y, Xv, Yv, batches):
        d = X.shape[1]
        k = Y.shape[1]
        B, h = self.batch_size, self.hidden
        lr = float(self.learning_rate)
        W, b = self._init_head(d)
        start = time.perf_counter()
        coord.free(coord.exec(PartyRole.TAIL, E("tail_init", h, k, float(self.learning_rate),
                                                self.activation, self._tail_seed())))
        Xs, Ws, bs = (coord.share(a) for a in (X, W, b))
        labels = coord.store(PartyRole.TAIL, Y)
        for step, idx in enumerate(batches, 1):
            idx = idx.astype(np.float64)
            t1, t2 = _triples(coord, [((B, d), (d, h), MulKind.MATMUL), ((d, B), (B, h), MulKind.MATMUL)])
            lk = coord.exec(PartyRole.TAIL, E("rows", Key(labels.key), idx))
            # z = xW + b is opened only at the tail; dz comes back as shares
            dz = coord.exec_shared("(hidden_fwd (add_row (beaver (rows {X} {idx}) {W} {t}) {b}) {lk})",
                                   X=Xs, idx=idx, W=Ws, b=bs, t=t1, lk=lk.key)
            W_new, b_new = _both(coord,
                                 ("(sub {W} (scale (beaver (T (rows {X} {idx})) {dz} {t}) {lr}))",
                                  dict(W=Ws, X=Xs, idx=idx, dz=dz, t=t2, lr=lr)),
                                 ("(sub {b} (scale (sum_rows {dz}) {lr}))", dict(b=bs, dz=dz, lr=lr)))
            coord.free(lk)
            coord.free_shared(dz, Ws, bs, t1, t2)
            Ws, bs = W_new, b_new
            if step % self.eval_every == 0:
                params = {"W1": coord.reveal(Ws), "b1": coord.reveal(bs), **self._tail_params(coord)}
                self._checkpoint(step, start, Xv, Yv, params)
        return {"W1": coord.reveal(Ws), "b1": coord.reveal(bs), **self._tail_params(coord)}
