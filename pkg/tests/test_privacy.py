import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import special, stats

from privml.privacy import (
    PrivacyBound,
    attack_simulate,
    chi2_cdf,
    gammainc_lower,
    join_attack_space,
    linear_privacy_bound,
    noise_privacy,
    permutation_privacy,
    wilson_interval,
)
from privml.tensor import Rng


def test_permutation_exact():
    assert permutation_privacy(1).exact == 1
    assert permutation_privacy(5).exact == Fraction(1, 120)
    for n in range(1, 21):
        assert permutation_privacy(n).exact * math.factorial(n) == 1
    big = permutation_privacy(200)
    assert big.epsilon == 0.0 and abs(big.log_epsilon + math.lgamma(201)) < 1e-9


@pytest.mark.parametrize("a", [0.5, 1.0, 2.5, 5.0, 30.0])
@pytest.mark.parametrize("x", [1e-3, 0.5, 1.0, 4.0, 25.0, 80.0])
def test_gamma_vs_scipy(a, x):
    assert abs(gammainc_lower(a, x) - special.gammainc(a, x)) < 1e-12


def test_chi2_cdf_vs_scipy():
    for k in (1, 2, 3, 9):
        for x in (0.1, 1.0, 4.0, 16.0):
            assert abs(chi2_cdf(x, k) - stats.chi2.cdf(x, k)) < 1e-12
    assert chi2_cdf(0.0, 3) == 0.0


def test_linear_bound_n2_closed_form():
    for d in (0.5, 1.0, 2.0):
        assert abs(linear_privacy_bound(2, d).epsilon - math.erf(d / math.sqrt(2))) < 1e-12


def test_linear_bound_monotone():
    ns, ds = [2, 3, 5, 10, 20], [0.25, 0.5, 1, 2, 4]
    grid = np.array([[linear_privacy_bound(n, d).epsilon for d in ds] for n in ns])
    assert np.all(np.diff(grid, axis=1) > 0)
    assert np.all(np.diff(grid, axis=0) < 0)
    with pytest.raises(ValueError):
        linear_privacy_bound(1, 1.0)
    with pytest.raises(ValueError):
        linear_privacy_bound(3, 0)


def test_noise_values():
    assert abs(noise_privacy(1, 3).epsilon - 0.9973) < 5e-4
    assert abs(noise_privacy(1, 1).epsilon - 0.6827) < 1e-4
    assert noise_privacy(2, 3).delta == 6


def test_join_attack_space():
    assert join_attack_space(5, 2)[0] == 20
    assert join_attack_space(10, 10)[0] == math.factorial(10)
    count, bits = join_attack_space(50, 7)
    assert count == math.perm(50, 7) and abs(bits - math.log2(count)) < 1e-9


def test_wilson():
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi and abs((lo + hi) / 2 - 0.5) < 1e-12
    lo, hi = wilson_interval(0, 1000)
    assert abs(lo) < 1e-15 and 0 < hi < 0.01


def test_bound_validation():
    with pytest.raises(ValueError):
        PrivacyBound(1.5)


def test_attack_permutation_rate():
    res = attack_simulate("permutation", 4, 20000, rng=Rng(1))
    lo, hi = res.interval
    assert lo <= 1 / 24 <= hi
    assert res.consistent()


def test_attack_noise_and_random_guess():
    best = attack_simulate("noise", 3, 20000, rng=Rng(2), delta=3.0, sigma=1.0)
    guess = attack_simulate("noise", 3, 20000, "random_guess", rng=Rng(3), delta=3.0, sigma=1.0)
    assert best.rate > guess.rate
    assert best.consistent() and guess.consistent()


def test_attack_linear_known_matrix():
    res = attack_simulate("linear", 5, 20000, rng=Rng(4), delta=1.0, m=2)
    assert abs(res.bound - stats.chi2.cdf(1.0, 3)) < 1e-12
    lo, hi = res.interval
    assert lo <= res.bound <= hi
    one = attack_simulate("linear", 5, 20000, rng=Rng(5), delta=1.0, m=1)
    assert abs(one.bound - linear_privacy_bound(5, 1.0).epsilon) < 1e-15
    assert one.consistent()


def test_attack_linear_unknown_matrix():
    res = attack_simulate("linear", 5, 20000, "random_guess", rng=Rng(6), delta=1.5, m=2)
    assert res.bound == linear_privacy_bound(5, 1.5).epsilon
    assert res.consistent()


def test_attack_rejects_small_trials():
    with pytest.raises(ValueError):
        attack_simulate("permutation", 3, 10, rng=Rng(0))
