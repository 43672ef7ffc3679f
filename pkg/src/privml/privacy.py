"""Reconstructive-privacy quantities and Monte-Carlo attack checks.

A transformation ``T`` has (epsilon, delta) reconstructive privacy when no
attacker recovers ``x`` from ``T(x)`` to within ``delta`` with probability
above ``epsilon``; ``delta`` is absent for exact recovery.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .tensor import Rng, rng_normal, rng_uniform

__all__ = [
    "AttackResult",
    "PrivacyBound",
    "attack_simulate",
    "chi2_cdf",
    "gammainc_lower",
    "join_attack_space",
    "linear_privacy_bound",
    "noise_privacy",
    "permutation_privacy",
    "wilson_interval",
]

_FACTORIAL_FLOAT_LIMIT = 170


@dataclass(frozen=True)
class PrivacyBound:
    epsilon: float
    delta: float | None = None
    assumptions: str = "no auxiliary information"
    log_epsilon: float | None = None
    exact: Fraction | None = None

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon {self.epsilon} outside [0, 1]")
        if self.delta is not None and self.delta < 0:
            raise ValueError(f"negative delta {self.delta}")


def permutation_privacy(n):
    """A random shuffle of ``n`` distinct values: ``epsilon = 1/n!``.

    ``exact`` carries the rational value; past ``n = 170`` the float
    underflows and ``log_epsilon`` is the usable representation.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    exact = Fraction(1, math.factorial(n))
    log_eps = -math.lgamma(n + 1)
    eps = float(exact) if n <= _FACTORIAL_FLOAT_LIMIT else 0.0
    return PrivacyBound(eps, None, "random permutation, no auxiliary information", log_eps, exact)


# -- regularized lower incomplete gamma --------------------------------------


def _gamma_series(a, x, tol, max_iter):
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(max_iter):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * tol:
            break
    else:
        raise ArithmeticError(f"gamma series did not converge for a={a}, x={x}")
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_contfrac(a, x, tol, max_iter):
    # Modified Lentz evaluation of the upper tail Q(a, x).
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        step = d * c
        h *= step
        if abs(step - 1.0) < tol:
            break
    else:
        raise ArithmeticError(f"gamma continued fraction did not converge for a={a}, x={x}")
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammainc_lower(a, x, tol=1e-15, max_iter=10_000):
    """Regularized lower incomplete gamma ``P(a, x)``.

    Power series below ``x = a + 1``, continued fraction for the complement
    above it.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(1.0, _gamma_series(a, x, tol, max_iter))
    return max(0.0, 1.0 - _gamma_contfrac(a, x, tol, max_iter))


def chi2_cdf(x, k):
    """CDF of the chi-square distribution with ``k`` degrees of freedom."""
    if x <= 0:
        return 0.0
    return gammainc_lower(k / 2.0, x / 2.0)


def linear_privacy_bound(n, delta):
    """Upper bound on epsilon for a random Gaussian linear map of ``x`` in R^n.

    ``P(|y| < delta)`` for ``y ~ N(0, I_{n-1})``, i.e. the chi-square CDF with
    ``n - 1`` degrees of freedom at ``delta**2``. This is a bound, not the
    exact leakage.
    """
    if n < 2:
        raise ValueError("linear bound needs n >= 2")
    if not delta > 0:
        raise ValueError("delta must be positive")
    eps = chi2_cdf(delta * delta, n - 1)
    return PrivacyBound(eps, float(delta), "x and A i.i.d. standard normal, A unknown (upper bound)")


def _phi(z):
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def noise_privacy(sigma, k):
    """Gaussian noise of std ``sigma``: ``epsilon = Phi(k) - Phi(-k)``, ``delta = k * sigma``."""
    if not sigma > 0 or not k > 0:
        raise ValueError("sigma and k must be positive")
    return PrivacyBound(_phi(k) - _phi(-k), k * sigma, f"noise variance {sigma**2} known")


def join_attack_space(n, m):
    """Number of injective maps of ``m`` known records onto ``n`` columns.

    Returns ``(count, log2(count))`` with ``count = n! / (n - m)!`` exact.
    """
    if not 0 <= m <= n:
        raise ValueError("need 0 <= m <= n")
    count = math.perm(n, m)
    return count, (math.lgamma(n + 1) - math.lgamma(n - m + 1)) / math.log(2)


# -- Monte-Carlo attacks -----------------------------------------------------

_Z95 = 1.959963984540054


def wilson_interval(successes, trials, z=_Z95):
    """Wilson score interval ``(low, high)`` for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class AttackResult:
    transform: str
    strategy: str
    trials: int
    successes: int
    bound: float

    @property
    def rate(self):
        return self.successes / self.trials

    @property
    def interval(self):
        return wilson_interval(self.successes, self.trials)

    @property
    def half_width(self):
        lo, hi = self.interval
        return (hi - lo) / 2.0

    def consistent(self, widths=3.0):
        """Empirical rate does not exceed the analytic bound by more than ``widths`` half-widths."""
        return self.rate <= self.bound + widths * self.half_width


def _random_perms(rng, count, n):
    keys = rng_uniform(rng, (count, n))
    return np.argsort(keys, axis=1, kind="stable")


def _chunks(trials, size=20_000):
    start = 0
    while start < trials:
        yield start, min(size, trials - start)
        start += size


def attack_simulate(transform_kind, n, trials, attacker_strategy="best_known", rng=None,
                    delta=None, sigma=1.0, m=None):
    """Empirical success rate of an attacker against one random transformation.

    ``permutation``: exact recovery of a shuffled vector of ``n`` distinct
    values. ``noise``: ``x + N(0, sigma^2 I_n)``, success within Euclidean
    radius ``delta`` (default ``3 sigma``). ``linear``: ``y = A x`` with
    ``A`` an ``m x n`` standard normal matrix, success within ``delta``
    (default 0.1). ``best_known`` knows the transformation where that helps
    (observed value for noise, least-norm preimage for linear);
    ``random_guess`` draws a guess from the prior.

    ``bound`` is the analytic success probability for that attacker. For
    ``linear`` with unknown ``A`` it is :func:`linear_privacy_bound`; an
    attacker who knows ``A`` is bounded by the chi-square CDF with ``n - m``
    degrees of freedom instead, which equals the former only when ``m == 1``.
    """
    if trials < 100:
        raise ValueError("attack_simulate needs at least 100 trials")
    if n < 1:
        raise ValueError("n must be >= 1")
    if attacker_strategy not in ("random_guess", "best_known"):
        raise ValueError(f"unknown attacker strategy {attacker_strategy!r}")
    rng = rng if rng is not None else Rng(0)
    hits = 0

    if transform_kind == "permutation":
        bound = permutation_privacy(n).epsilon
        for k, (_, size) in enumerate(_chunks(trials)):
            sub = rng.child("trial", k)
            secret = _random_perms(sub.child("secret"), size, n)
            # without auxiliary information the best attack is a uniform guess
            guess = _random_perms(sub.child("guess"), size, n)
            hits += int(np.all(secret == guess, axis=1).sum())

    elif transform_kind == "noise":
        delta = 3.0 * sigma if delta is None else delta
        if attacker_strategy == "best_known":
            bound = chi2_cdf((delta / sigma) ** 2, n)
        else:
            bound = chi2_cdf(delta * delta / 2.0, n)  # guess - x ~ N(0, 2I)
        for k, (_, size) in enumerate(_chunks(trials)):
            sub = rng.child("trial", k)
            x = rng_normal(sub.child("x"), (size, n))
            observed = x + rng_normal(sub.child("e"), (size, n), 0.0, sigma)
            guess = observed if attacker_strategy == "best_known" else rng_normal(sub.child("g"), (size, n))
            hits += int((np.linalg.norm(guess - x, axis=1) < delta).sum())

    elif transform_kind == "linear":
        if n < 2:
            raise ValueError("linear transform needs n >= 2")
        delta = 0.1 if delta is None else delta
        m = max(1, n // 3) if m is None else m
        if attacker_strategy == "best_known":
            # knowing A pins x down in its m-dim row space; the residual is N(0, I_{n-m})
            bound = chi2_cdf(delta * delta, n - m) if m < n else 1.0
        else:
            bound = linear_privacy_bound(n, delta).epsilon
        for k, (_, size) in enumerate(_chunks(trials)):
            sub = rng.child("trial", k)
            x = rng_normal(sub.child("x"), (size, n))
            A = rng_normal(sub.child("A"), (size, m, n))
            if attacker_strategy == "best_known":
                y = np.einsum("tmn,tn->tm", A, x)
                guess = np.einsum("tnm,tm->tn", np.linalg.pinv(A), y)
            else:
                guess = rng_normal(sub.child("g"), (size, n))
            hits += int((np.linalg.norm(guess - x, axis=1) < delta).sum())

    else:
        raise ValueError(f"unknown transform kind {transform_kind!r}")

    return AttackResult(transform_kind, attacker_strategy, trials, hits, bound)
