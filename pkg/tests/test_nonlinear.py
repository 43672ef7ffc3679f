import json

import numpy as np
import pytest

from privml.errors import ProtocolError
from privml.nonlinear import (
    NONLINEAR,
    ThirdPartyEvaluator,
    apply_inverse,
    apply_perm,
    eval_nonlinear,
    permutation_from_seed,
    resolve_fns,
)
from privml.sharing import SharedPair
from privml.tensor import Rng, rng_normal


def ref_fisher_yates(seed, n):
    # independent oracle: scalar splitmix64 draws, same swap rule
    M = (1 << 64) - 1
    state, a = seed, list(range(n))
    for i in range(n - 1, 0, -1):
        state = (state + 0x9E3779B97F4A7C15) & M
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
        z ^= z >> 31
        j = (z * (i + 1)) >> 64
        a[i], a[j] = a[j], a[i]
    return a


def test_golden_permutation(golden):
    data = json.loads((golden / "perm_seed42_n10.json").read_text())
    p = permutation_from_seed(42, 10)
    assert p.forward.tolist() == data["forward"] == ref_fisher_yates(42, 10)


@pytest.mark.parametrize("n", [1, 2, 7, 100])
def test_permutation_bijective_and_inverse(n):
    p = permutation_from_seed(n * 31, n)
    assert sorted(p.forward.tolist()) == list(range(n))
    x = np.arange(n, dtype=float) * 1.5
    assert np.array_equal(apply_inverse(p, apply_perm(p, x)), x)
    assert np.array_equal(p.forward[p.inverse], np.arange(n))


def test_same_seed_same_permutation():
    assert np.array_equal(permutation_from_seed(7, 50).forward, permutation_from_seed(7, 50).forward)
    assert not np.array_equal(permutation_from_seed(7, 50).forward, permutation_from_seed(8, 50).forward)


def test_permutation_uniform_small():
    counts = {}
    for s in range(6000):
        key = tuple(permutation_from_seed(s, 3).forward.tolist())
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 6
    assert all(800 < c < 1200 for c in counts.values())


def test_sigmoid_values_and_stability():
    s = NONLINEAR["sigmoid"]
    assert s(np.array([0.0]))[0] == 0.5
    assert np.all(np.isfinite(s(np.array([-1000.0, 1000.0]))))
    z = np.linspace(-5, 5, 11)
    assert np.allclose(NONLINEAR["sigmoid_prime"](z), s(z) * (1 - s(z)))
    assert NONLINEAR["relu"](np.array([-1.0, 2.0])).tolist() == [0.0, 2.0]


def test_softmax_rejected():
    with pytest.raises(ValueError):
        resolve_fns("softmax")
    with pytest.raises(ValueError):
        resolve_fns("tanh_but_unknown")


@pytest.mark.parametrize("n", [1, 5, 4096])
def test_eval_sigmoid_matches_and_p3_sees_permuted(n):
    r = Rng(n)
    x = rng_normal(r, (n,)) * 4
    X = SharedPair.of(x, r)
    p3 = ThirdPartyEvaluator(seed=1, record=True)
    out = eval_nonlinear(X.p0, X.p1, "sigmoid", seed=99, p3=p3)
    assert np.max(np.abs(out.reveal() - NONLINEAR["sigmoid"](x))) < 1e-9
    (tag, view), = p3.transcript
    perm = permutation_from_seed(99, n)
    assert np.allclose(view, x[perm.forward], atol=1e-10)
    assert np.allclose(np.sort(view), np.sort(x), atol=1e-10)


def test_eval_two_fns_one_round():
    r = Rng(3)
    x = rng_normal(r, (4, 3))
    X = SharedPair.of(x, r)
    p3 = ThirdPartyEvaluator(record=True)
    s, ds = eval_nonlinear(X.p0, X.p1, "sigmoid,sigmoid_prime", seed=5, p3=p3)
    assert len(p3.transcript) == 1
    assert np.allclose(s.reveal(), NONLINEAR["sigmoid"](x))
    assert np.allclose(ds.reveal(), NONLINEAR["sigmoid_prime"](x))
    assert s.shape == (4, 3)


def test_eval_noise_zero_is_plain_and_noise_perturbs():
    r = Rng(2)
    x = rng_normal(r, (50,))
    X = SharedPair.of(x, r)
    p3 = ThirdPartyEvaluator()
    a = eval_nonlinear(X.p0, X.p1, "relu", seed=1, p3=p3, noise_sigma=0.0).reveal()
    b = eval_nonlinear(X.p0, X.p1, "relu", seed=1, p3=p3, noise_sigma=0.5).reveal()
    assert np.allclose(a, np.maximum(x, 0))
    assert not np.allclose(b, a)


def test_missing_third_party():
    X = SharedPair.of(np.ones(3), Rng(0))
    with pytest.raises(ProtocolError):
        eval_nonlinear(X.p0, X.p1, "sigmoid", seed=1, p3=None)
