"""Privacy accounting for the communication mechanisms.

Closed forms:
    epsilon_local             local randomizer with sampling and flooding
    epsilon_scrambler_capped  capped scrambler fed by the sampling randomizer

Amplification bounds, all (epsilon, delta) with the same binomial mixture
over the number of blanket-sampled inputs:
    delta_bound_hoeffding, delta_bound_bennett, delta_bound_empirical,
    generic_randomizer_delta

``epsilon_for_delta`` inverts any of them by a grid scan and bisection and ``compose_plan``
adds budgets along the data paths of an execution plan.

The mixture is written over m = 0..n-1 other sampled inputs with
k = m + d + 1 summands. It is the same quantity as the form indexed by
m = 1..n with weight m/(sigma n) and k = m + d, and has the advantage of
covering sigma = 0 (only m = 0 remains).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy.special import gammaln, logsumexp

from . import kernels
from .model import ExecutionPlan
from .rng import RngSeed, as_generator

EPS_FLOOR = 1e-6
EPS_TOL = 1e-4
# search ceiling when no finite pure-DP fallback exists (sigma = 0)
EPS_CEILING = 50.0


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) pair. ``a <= b`` means a is at least as private as b."""

    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if math.isnan(self.epsilon) or self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")

    def __add__(self, other: "PrivacyBudget") -> "PrivacyBudget":
        return PrivacyBudget(self.epsilon + other.epsilon, min(1.0, self.delta + other.delta))

    def __le__(self, other: "PrivacyBudget") -> bool:
        return self.epsilon <= other.epsilon and self.delta <= other.delta

    def __ge__(self, other: "PrivacyBudget") -> bool:
        return other <= self


@dataclass(frozen=True)
class AmplificationParams:
    """Moments and support of a privacy amplification variable L.

    Attributes:
        gamma: total variation similarity of the local randomizer.
        a: magnitude of E[L], i.e. e^epsilon - 1.
        b_lo, b_hi: support bounds of L.
        b: range b_hi - b_lo.
        c: bound on E[L^2].
    """

    gamma: float
    a: float
    b_lo: float
    b_hi: float
    b: float
    c: float

    @classmethod
    def randomized_response(cls, epsilon: float, sigma: float, T: int) -> "AmplificationParams":
        """Exact moments for the sampling randomizer with a uniform blanket."""
        e = math.exp(epsilon)
        base = sigma * (1.0 - e)
        b_lo = base - (1.0 - sigma) * T * e
        b_hi = (1.0 - sigma) * T - base
        c = sigma * (2.0 - sigma) * (1.0 - e) ** 2 + (1.0 - sigma) ** 2 * T * (1.0 + e * e)
        return cls(gamma=sigma, a=e - 1.0, b_lo=b_lo, b_hi=b_hi, b=b_hi - b_lo, c=c)

    @classmethod
    def generic(cls, epsilon: float, epsilon0: float, gamma: float) -> "AmplificationParams":
        """Range bounds valid for any epsilon0-DP randomizer with similarity gamma."""
        e, e0 = math.exp(epsilon), math.exp(epsilon0)
        b_lo = gamma / e0 * (1.0 - e * e0 * e0)
        b_hi = gamma * e0 * (1.0 - e / (e0 * e0))
        c = gamma * e0 * (e * e + 1.0) - 2.0 * gamma * gamma * e / (e0 * e0)
        return cls(gamma=gamma, a=e - 1.0, b_lo=b_lo, b_hi=b_hi, b=gamma * (1.0 + e) * (e0 - 1.0 / e0), c=c)


# closed forms

def epsilon_local(sigma: float, d: int, T: int) -> float:
    """Epsilon of the local randomizer with sampling sigma and d flooding dummies.

    Returns 0 for a broadcast (d = T-1) or sigma = 1 and ``math.inf`` when
    sigma = 0 and d < T-1.
    """
    if T < 2 or int(T) != T:
        raise ValueError("T must be an integer >= 2")
    if not 0 <= d <= T - 1 or int(d) != d:
        raise ValueError(f"d must be an integer in [0, {T - 1}]")
    if not 0.0 <= sigma <= 1.0:
        raise ValueError("sigma must lie in [0, 1]")
    if d == T - 1 or sigma == 1.0:
        return 0.0
    if sigma == 0.0:
        return math.inf
    return math.log1p((1.0 - sigma) * T / (sigma * (d + 1)))


def epsilon_local_total_budget(sigma: float, total_dummies: int, n: int, T: int) -> float:
    """Local-mode epsilon when ``total_dummies`` are shared by n sources.

    The guarantee is set by the worst-off source, which gets floor(total/n)
    dummies (at most T-1).
    """
    if total_dummies < 0 or n < 1:
        raise ValueError("need total_dummies >= 0 and n >= 1")
    return epsilon_local(sigma, min(total_dummies // n, T - 1), T)


def _lbinom(n, k):
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def epsilon_scrambler_capped(sigma: float, d: int, n: int, T: int) -> float:
    """Closed-form epsilon of the capped scrambler fed by the sampling randomizer.

    Evaluated in log-space. d = 0 gives the limit (1-sigma)(T-1)/sigma and
    d >= n keeps only the terms k <= n-1; both lie outside the range the
    closed form was derived for.
    """
    if T < 3:
        raise ValueError("T must be >= 3")
    if n < 2:
        raise ValueError("n must be >= 2")
    if d < 0 or int(d) != d:
        raise ValueError("d must be a non-negative integer")
    if not 0.0 <= sigma <= 1.0:
        raise ValueError("sigma must lie in [0, 1]")
    if sigma == 1.0:
        return 0.0
    if sigma == 0.0:
        return math.inf
    r = sigma / (T - 1)
    a = 1.0 - sigma
    k = np.arange(0, min(d, n - 1) + 1, dtype=float)
    log_w = _lbinom(d, k) + _lbinom(n - 1, k) + k * math.log(a) + (n - k - 1) * math.log(r)
    log_num = logsumexp(log_w + np.log(a + k * r * r / a))
    log_den = logsumexp(log_w + np.log(r + k * r * r / a))
    return max(0.0, float(log_num - log_den))


# amplification variable

def sample_amplification_variable(epsilon: float, sigma: float, T: int, t: int, t_prime: int,
                                  rng=None, size=None):
    """Draw L = sigma(1-e^eps) + (1-sigma) T (1[t''=t] - e^eps 1[t''=t']) with t'' uniform."""
    if t == t_prime:
        raise ValueError("t and t_prime must differ")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if not (0 <= t < T and 0 <= t_prime < T):
        raise ValueError("targets must be indices in [0, T)")
    e = math.exp(epsilon)
    tpp = as_generator(rng).integers(T, size=size)
    val = sigma * (1.0 - e) + (1.0 - sigma) * T * ((tpp == t) - e * (tpp == t_prime))
    return float(val) if size is None else val


def amplification_values(epsilon: float, sigma: float, T: int) -> np.ndarray:
    """Values of L when t'' hits t, hits t', or misses both."""
    e = math.exp(epsilon)
    base = sigma * (1.0 - e)
    return np.array([base + (1.0 - sigma) * T, base - (1.0 - sigma) * T * e, base])


# mixture over the number of sampled inputs

def _mixture_log_weights(sigma: float, n: int) -> np.ndarray:
    """log P(m of the other n-1 inputs are sampled), m = 0..n-1."""
    if sigma == 0.0:
        w = np.full(n, -np.inf)
        w[0] = 0.0
        return w
    m = np.arange(n, dtype=float)
    return _lbinom(n - 1, m) + m * math.log(sigma) + (n - 1 - m) * math.log1p(-sigma)


def _validate(epsilon, sigma, n, d):
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    if not 0.0 <= sigma <= 1.0:
        raise ValueError("sigma must lie in [0, 1]")
    if n < 1 or int(n) != n:
        raise ValueError("n must be a positive integer")
    if d < 0 or int(d) != d:
        raise ValueError("d must be a non-negative integer")


def mixture_delta(log_tail: Callable[[np.ndarray], np.ndarray], sigma: float, n: int, d: int) -> float:
    """Assemble delta from log E[sum_{i<=k} L_i]_+ evaluated at k = m+d+1."""
    log_w = _mixture_log_weights(sigma, n)
    k = np.arange(n, dtype=float) + d + 1
    keep = np.isfinite(log_w)
    terms = log_w[keep] + log_tail(k[keep]) - np.log(k[keep])
    return float(min(1.0, max(0.0, math.exp(logsumexp(terms)))))


def mixture_terms(log_tail: Callable[[np.ndarray], np.ndarray], sigma: float, n: int, d: int) -> np.ndarray:
    """Per-m contributions to delta (for verbose reporting)."""
    log_w = _mixture_log_weights(sigma, n)
    k = np.arange(n, dtype=float) + d + 1
    with np.errstate(invalid="ignore"):
        return np.exp(log_w + log_tail(k) - np.log(k))


def _hoeffding_log_tail(p: AmplificationParams):
    return lambda k: math.log(p.b * p.b / (4.0 * p.a)) - 2.0 * k * p.a * p.a / (p.b * p.b)


def _bennett_log_tail(p: AmplificationParams, variant: str):
    u = p.a * p.b_hi / p.c
    phi = (1.0 + u) * math.log1p(u) - u
    base = math.log(p.b_hi) - math.log(math.log1p(u))
    rate = p.c * phi / (p.b_hi * p.b_hi)
    if variant == "chernoff":
        return lambda k: base - k * rate
    if variant == "printed":
        return lambda k: base - np.log(p.a * k) - k * rate
    raise ValueError(f"unknown Bennett variant {variant!r}")


def delta_bound_hoeffding(epsilon: float, sigma: float, n: int, d: int, T: int) -> float:
    """Hoeffding-based delta for n scrambled sampling randomizers plus d dummies."""
    _validate(epsilon, sigma, n, d)
    if sigma == 1.0:
        return 0.0
    p = AmplificationParams.randomized_response(epsilon, sigma, T)
    return mixture_delta(_hoeffding_log_tail(p), sigma, n, d)


def delta_bound_bennett(epsilon: float, sigma: float, n: int, d: int, T: int,
                        variant: str = "chernoff") -> float:
    """Bennett-type delta using the exact second moment of L.

    Args:
        variant: "chernoff" (default) bounds E[sum L]_+ by
            b_hi / ln(1+u) * exp(-(k c / b_hi^2) phi(u)), u = a b_hi / c, which
            follows from Bennett's moment generating function bound.
            "printed" adds a further 1/(a k) factor; that form is not a valid
            upper bound and is kept only for comparison.
    """
    _validate(epsilon, sigma, n, d)
    if sigma == 1.0:
        return 0.0
    p = AmplificationParams.randomized_response(epsilon, sigma, T)
    return mixture_delta(_bennett_log_tail(p, variant), sigma, n, d)


def amplification_pool(sigma: float, n: int, d: int, T: int, R: int = 5000, rng=None) -> np.ndarray:
    """Categories of R x K draws of t'': 0 hits t, 1 hits t', 2 misses both.

    K = n+d covers every k = m+d+1 of the mixture by prefix sums.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    if rng is None:
        rng = RngSeed(0).generator("amplification")
    K = n + d if sigma > 0.0 else d + 1
    draws = as_generator(rng).integers(T, size=(R, K))
    return np.minimum(draws, 2).astype(np.uint8)


def empirical_delta_from_pool(pool: np.ndarray, epsilon: float, sigma: float, n: int, d: int, T: int,
                              backend: str | None = None) -> float:
    """Monte Carlo delta from a pre-drawn pool (common random numbers across epsilon)."""
    if sigma == 1.0:
        return 0.0
    R = pool.shape[0]
    tails = kernels.tail_positive_sums(pool, amplification_values(epsilon, sigma, T), backend=backend) / R
    w = np.exp(_mixture_log_weights(sigma, n))
    k = np.arange(n) + d + 1
    if sigma == 0.0:
        w, k = w[:1], k[:1]
    total = float(np.sum(w * tails[k - 1] / k))
    return min(1.0, max(0.0, total))


def delta_bound_empirical(epsilon: float, sigma: float, n: int, d: int, T: int, R: int = 5000,
                          rng=None, backend: str | None = None) -> float:
    """Delta with every tail expectation replaced by its mean over R replicates."""
    _validate(epsilon, sigma, n, d)
    if sigma == 1.0:
        return 0.0
    pool = amplification_pool(sigma, n, d, T, R, rng)
    return empirical_delta_from_pool(pool, epsilon, sigma, n, d, T, backend=backend)


def generic_randomizer_delta(epsilon: float, epsilon0: float, gamma: float | None, n: int, d: int) -> float:
    """Hoeffding-based delta for any epsilon0-DP local randomizer.

    ``gamma`` defaults to e^-epsilon0, which every epsilon0-DP randomizer attains.
    """
    if gamma is None:
        gamma = math.exp(-epsilon0)
    if not epsilon0 > 0:
        raise ValueError("epsilon0 must be > 0")
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    _validate(epsilon, gamma, n, d)
    p = AmplificationParams.generic(epsilon, epsilon0, gamma)
    return mixture_delta(_hoeffding_log_tail(p), gamma, n, d)


# inversion

def bisect_epsilon(delta_fn: Callable[[float], float], delta_target: float, lo: float, hi: float,
                   tol: float = EPS_TOL) -> tuple[float, float]:
    """Shrink [lo, hi] around the smallest epsilon with delta_fn(epsilon) <= target.

    Assumes delta_fn is non-increasing, delta_fn(hi) <= target < delta_fn(lo).
    Returns the final bracket, of width < tol.
    """
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        if delta_fn(mid) <= delta_target:
            hi = mid
        else:
            lo = mid
    return lo, hi


METHODS = ("hoeffding", "bennett", "empirical", "local", "exact")


def epsilon_for_delta(delta_target: float, method: str, *, sigma: float, T: int, n: int | None = None,
                      d: int = 0, R: int = 5000, rng=None, backend: str | None = None) -> float:
    """Smallest epsilon whose delta bound meets ``delta_target``.

    The answer never exceeds the pure epsilon of one sampling randomizer,
    which holds with delta = 0. For "local" and "exact" the target is ignored.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if method == "local":
        return epsilon_local(sigma, d, T)
    if n is None:
        raise ValueError(f"method {method!r} needs the group size n")
    if method == "exact":
        return epsilon_scrambler_capped(sigma, d, n, T)
    if not 0.0 < delta_target < 1.0:
        raise ValueError("delta_target must lie in (0, 1)")
    _validate(1.0, sigma, n, d)
    if sigma == 1.0:
        return 0.0
    fallback = epsilon_local(sigma, 0, T)
    if method == "hoeffding":
        fn = lambda e: delta_bound_hoeffding(e, sigma, n, d, T)
    elif method == "bennett":
        fn = lambda e: delta_bound_bennett(e, sigma, n, d, T)
    else:
        pool = amplification_pool(sigma, n, d, T, R, rng)
        fn = lambda e: empirical_delta_from_pool(pool, e, sigma, n, d, T, backend=backend)
    if fn(EPS_FLOOR) <= delta_target:
        return EPS_FLOOR
    hi = min(fallback, EPS_CEILING)
    # the analytic bounds grow again for large epsilon, so look for the first
    # feasible point on a geometric grid before bisecting
    lo = EPS_FLOOR
    for e in np.geomspace(EPS_FLOOR, hi, 97)[1:]:
        if fn(e) <= delta_target:
            _, found = bisect_epsilon(fn, delta_target, lo, float(e))
            return min(found, fallback)
        lo = float(e)
    return fallback


# composition

def compose_plan(plan: ExecutionPlan, per_cluster: Mapping[str, PrivacyBudget]) -> PrivacyBudget:
    """Worst-case path sums of epsilon and of delta.

    Clusters flagged data-independent default to (0, 0).
    """
    eps_best, delta_best = 0.0, 0.0
    for path in plan.paths:
        eps, delta = 0.0, 0.0
        for cid in path:
            b = per_cluster.get(cid)
            if b is None:
                if plan.cluster(cid).data_independent:
                    continue
                raise ValueError(f"no budget for cluster {cid!r} on path {path}")
            eps += b.epsilon
            delta += b.delta
        eps_best = max(eps_best, eps)
        delta_best = max(delta_best, delta)
    return PrivacyBudget(eps_best, min(1.0, delta_best))
