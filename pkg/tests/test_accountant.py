import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from commdp import accountant as acc
from commdp.accountant import (
    AmplificationParams,
    PrivacyBudget,
    bisect_epsilon,
    compose_plan,
    delta_bound_bennett,
    delta_bound_empirical,
    delta_bound_hoeffding,
    epsilon_for_delta,
    epsilon_local,
    epsilon_local_total_budget,
    epsilon_scrambler_capped,
    generic_randomizer_delta,
    sample_amplification_variable,
)
from commdp.model import running_example_plan
from commdp.oracle import delta_exact_tail

# mpmath at 50 digits: (1/1000) (b^2/4a) exp(-2000 a^2/b^2), a = e-1, b = 20(1+e)
HOEFFDING_SIGMA0 = 0.27660966789508664781975096700106904379201283401483


# closed forms

def test_epsilon_local_examples():
    assert epsilon_local(1.0, 0, 20) == 0.0
    assert epsilon_local(0.1, 19, 20) == 0.0
    assert epsilon_local(0.5, 4, 20) == pytest.approx(math.log(5), abs=1e-12)
    assert epsilon_local(0.0, 3, 20) == math.inf
    with pytest.raises(ValueError):
        epsilon_local(0.5, 20, 20)


def test_epsilon_local_total_budget():
    # 100 sources sharing 350 dummies: the worst-off gets 3
    assert epsilon_local_total_budget(0.5, 350, 100, 20) == epsilon_local(0.5, 3, 20)
    assert epsilon_local_total_budget(0.5, 10**6, 100, 20) == 0.0


def _capped_ratio_fraction(sigma, d, n, T):
    r = sigma / (T - 1)
    a = 1 - sigma
    num = sum(math.comb(d, k) * math.comb(n - 1, k) * a**k * r ** (n - k - 1) * (a + k * r * r / a)
              for k in range(min(d, n - 1) + 1))
    den = sum(math.comb(d, k) * math.comb(n - 1, k) * a**k * r ** (n - k - 1) * (r + k * r * r / a)
              for k in range(min(d, n - 1) + 1))
    return num / den


def test_capped_closed_form_rational():
    ratio = _capped_ratio_fraction(Fraction(1, 2), 1, 2, 20)
    assert ratio == Fraction(127, 7)
    assert math.exp(epsilon_scrambler_capped(0.5, 1, 2, 20)) == pytest.approx(127 / 7, rel=1e-12)


@pytest.mark.parametrize("sigma,d,n,T", [(0.2, 3, 10, 5), (0.7, 9, 30, 20), (0.5, 40, 41, 8)])
def test_capped_log_space_matches_rationals(sigma, d, n, T):
    exact = _capped_ratio_fraction(Fraction(sigma).limit_denominator(100), d, n, T)
    assert epsilon_scrambler_capped(sigma, d, n, T) == pytest.approx(max(0.0, math.log(exact)), rel=1e-10)


def test_capped_large_and_degenerate():
    eps = epsilon_scrambler_capped(0.3, 1000, 600, 20)
    assert math.isfinite(eps) and eps >= 0
    assert epsilon_scrambler_capped(1.0, 5, 10, 20) == 0.0
    assert epsilon_scrambler_capped(0.0, 5, 10, 20) == math.inf
    # d = 0 limit
    assert epsilon_scrambler_capped(0.4, 0, 10, 20) == pytest.approx(math.log(0.6 * 19 / 0.4))
    with pytest.raises(ValueError):
        epsilon_scrambler_capped(0.5, 1, 2, 2)


def test_capped_non_increasing_in_d():
    for sigma in (0.2, 0.5, 0.8):
        eps = [epsilon_scrambler_capped(sigma, d, 50, 20) for d in range(1, 50)]
        assert all(x >= y - 1e-12 for x, y in zip(eps, eps[1:]))


# amplification variable

def test_amplification_moments_exact():
    for eps, sigma, T in [(1.0, 0.2, 20), (0.3, 0.7, 4), (2.0, 0.0, 5)]:
        vals = acc.amplification_values(eps, sigma, T)
        probs = np.array([1 / T, 1 / T, (T - 2) / T])
        p = AmplificationParams.randomized_response(eps, sigma, T)
        assert probs @ vals == pytest.approx(-p.a, abs=1e-12)
        assert probs @ vals**2 == pytest.approx(p.c, rel=1e-12)
        # the support bounds enclose every value of L
        assert p.b_lo <= vals.min() + 1e-12 and p.b_hi >= vals.max() - 1e-12
        assert p.b_lo <= 0 <= p.b_hi and p.c >= p.a**2


def test_amplification_sampling():
    e = math.e
    draws = sample_amplification_variable(1.0, 0.2, 20, 0, 1, rng=3, size=10**6)
    se = draws.std() / math.sqrt(draws.size)
    assert abs(draws.mean() - (1 - e)) < 4 * se
    assert sample_amplification_variable(1.0, 1.0, 20, 0, 1, rng=4) == pytest.approx(1 - e)
    v = sample_amplification_variable(1.0, 0.0, 20, 0, 1, rng=5, size=200000)
    support, counts = np.unique(np.round(v, 9), return_counts=True)
    assert np.allclose(support, [-20 * e, 0, 20])
    assert np.allclose(counts / v.size, [0.05, 0.9, 0.05], atol=0.003)
    with pytest.raises(ValueError):
        sample_amplification_variable(1.0, 0.2, 20, 1, 1)


# delta bounds

def test_hoeffding_sigma0_frozen():
    a = mpmath.e - 1
    b = 20 * (1 + mpmath.e)
    with mpmath.workdps(50):
        ref = (b * b / (4 * a)) * mpmath.exp(-2 * 1000 * a * a / (b * b)) / 1000
    assert float(ref) == pytest.approx(HOEFFDING_SIGMA0, rel=1e-15)
    assert delta_bound_hoeffding(1.0, 0.0, 1, 999, 20) == pytest.approx(HOEFFDING_SIGMA0, rel=1e-13)


def _printed_hoeffding_mp(eps, sigma, n, d, T):
    # the form indexed by m = 1..n with weight m/(sigma n (m+d))
    with mpmath.workdps(40):
        e = mpmath.e ** eps
        s = mpmath.mpf(sigma)
        a = e - 1
        b = (1 - s) * T * (1 + e) - 2 * s * (1 - e)
        tot = mpmath.mpf(0)
        for m in range(1, n + 1):
            tot += (mpmath.mpf(m) / (m + d) * mpmath.binomial(n, m) * s**m * (1 - s) ** (n - m)
                    * b * b / (4 * a) * mpmath.exp(-2 * (m + d) * a * a / (b * b)))
        return float(tot / (s * n))


@pytest.mark.parametrize("eps,sigma,n,d,T", [(1.0, 0.2, 40, 3000, 20), (2.0, 0.5, 200, 2000, 10),
                                           (0.5, 0.9, 60, 5000, 4)])
def test_mixture_equals_printed_form(eps, sigma, n, d, T):
    p = AmplificationParams.randomized_response(eps, sigma, T)
    unclamped = acc.mixture_terms(acc._hoeffding_log_tail(p), sigma, n, d).sum()
    assert unclamped == pytest.approx(_printed_hoeffding_mp(eps, sigma, n, d, T), rel=1e-10)


def test_bounds_validation_and_sigma_one():
    with pytest.raises(ValueError):
        delta_bound_hoeffding(0.0, 0.2, 10, 5, 20)
    for fn in (delta_bound_hoeffding, delta_bound_bennett, delta_bound_empirical):
        assert fn(1.0, 1.0, 10, 5, 20) == 0.0


def _unclamped(tail, eps, sigma, n, d, T):
    p = AmplificationParams.randomized_response(eps, sigma, T)
    return acc.mixture_terms(tail(p), sigma, n, d).sum()


def test_hoeffding_improves_with_n():
    # both clamp to 1 at these parameters; the unclamped mixture still decreases strictly
    assert delta_bound_hoeffding(1.0, 0.2, 500, 50, 20) <= delta_bound_hoeffding(1.0, 0.2, 100, 50, 20)
    big = _unclamped(acc._hoeffding_log_tail, 1.0, 0.2, 100, 50, 20)
    small = _unclamped(acc._hoeffding_log_tail, 1.0, 0.2, 500, 50, 20)
    assert small < big


def test_bennett_sound_where_printed_form_is_not():
    exact = delta_exact_tail(1.0, 0.2, 500, 50, 20)
    assert delta_bound_bennett(1.0, 0.2, 500, 50, 20) >= exact
    assert delta_bound_bennett(1.0, 0.2, 500, 50, 20, variant="printed") < exact
    assert delta_bound_hoeffding(1.0, 0.2, 500, 50, 20) >= exact


@pytest.mark.parametrize("eps,sigma,n,d", [(0.5, 0.2, 30, 10), (1.0, 0.5, 100, 0), (2.0, 0.0, 1, 200)])
def test_analytic_bounds_dominate_exact_tails(eps, sigma, n, d):
    exact = delta_exact_tail(eps, sigma, n, d, 20)
    assert delta_bound_hoeffding(eps, sigma, n, d, 20) >= exact
    assert delta_bound_bennett(eps, sigma, n, d, 20) >= exact


def test_phi_at_zero():
    p = AmplificationParams(gamma=0.5, a=1e-300, b_lo=-1.0, b_hi=1.0, b=2.0, c=1.0)
    u = p.a * p.b_hi / p.c
    assert (1 + u) * math.log1p(u) - u == 0.0


def test_empirical_matches_exact_tail_statistically():
    exact = delta_exact_tail(1.0, 0.3, 50, 20, 10)
    est = [delta_bound_empirical(1.0, 0.3, 50, 20, 10, R=5000, rng=s) for s in range(8)]
    assert abs(np.mean(est) - exact) < 4 * np.std(est) / math.sqrt(8) + 1e-12


def test_empirical_below_hoeffding():
    assert delta_bound_empirical(1.0, 0.2, 100, 50, 20) <= delta_bound_hoeffding(1.0, 0.2, 100, 50, 20)


GRID = dict(eps=1.0, sigma=0.3, n=200, d=100, T=20)


@pytest.mark.parametrize("method", ["hoeffding", "bennett", "empirical"])
def test_monotone_in_n_d_sigma(method):
    def delta(**kw):
        args = {**GRID, **kw}
        if method == "empirical":
            # one seed across arguments; clamp-free regime
            return delta_bound_empirical(args["eps"], args["sigma"], args["n"], args["d"], args["T"], rng=1)
        fn = delta_bound_hoeffding if method == "hoeffding" else delta_bound_bennett
        return fn(args["eps"], args["sigma"], args["n"], args["d"], args["T"])

    def unclamped(**kw):
        if method == "empirical":
            return delta(**kw)
        args = {**GRID, **kw}
        tail = acc._hoeffding_log_tail if method == "hoeffding" else (lambda p: acc._bennett_log_tail(p, "chernoff"))
        return _unclamped(tail, args["eps"], args["sigma"], args["n"], args["d"], args["T"])

    for key, values in (("n", [50, 200, 800, 3200]), ("d", [100, 400, 1600, 6400]),
                        ("sigma", [0.1, 0.3, 0.5, 0.7])):
        seq = [unclamped(**{key: v}) for v in values]
        assert all(x >= y for x, y in zip(seq, seq[1:])), (key, seq)
        clamped = [delta(**{key: v}) for v in values]
        assert all(x >= y for x, y in zip(clamped, clamped[1:])), (key, clamped)


def test_generic_randomizer():
    sigma = 0.2
    eps0 = epsilon_local(sigma, 0, 20)
    # gamma default is e^-eps0
    assert generic_randomizer_delta(1.0, eps0, None, 1000, 1000) == \
        generic_randomizer_delta(1.0, eps0, math.exp(-eps0), 1000, 1000)
    generic = generic_randomizer_delta(1.0, eps0, sigma, 1000, 1000)
    special = delta_bound_hoeffding(1.0, sigma, 1000, 1000, 20)
    assert 1.0 > generic > special
    seq = [generic_randomizer_delta(1.0, eps0, sigma, n, 1000) for n in (100, 1000, 5000)]
    assert seq[0] >= seq[1] >= seq[2]
    with pytest.raises(ValueError):
        generic_randomizer_delta(1.0, eps0, 0.0, 10, 10)
    p = AmplificationParams.generic(1.0, eps0, sigma)
    assert p.b == pytest.approx(p.b_hi - p.b_lo)


# search

def test_epsilon_for_delta_closed_forms():
    assert epsilon_for_delta(0.5, "local", sigma=0.5, T=20, d=4) == pytest.approx(math.log(5))
    assert epsilon_for_delta(0.5, "exact", sigma=0.5, T=20, n=2, d=1) == epsilon_scrambler_capped(0.5, 1, 2, 20)
    with pytest.raises(ValueError):
        epsilon_for_delta(1e-4, "hoeffding", sigma=0.5, T=20)
    with pytest.raises(ValueError):
        epsilon_for_delta(1e-4, "magic", sigma=0.5, T=20, n=3)


def test_bisect_bracket_width():
    lo, hi = bisect_epsilon(lambda e: math.exp(-e), 0.1, 1e-6, 10.0)
    assert hi - lo < 1e-4 and lo < math.log(10) <= hi


def test_epsilon_for_delta_properties():
    kw = dict(sigma=0.2, T=20, n=5000, d=50)
    e_small = epsilon_for_delta(1e-6, "bennett", **kw)
    e_large = epsilon_for_delta(1e-3, "bennett", **kw)
    assert e_large <= e_small <= epsilon_local(0.2, 0, 20)
    assert delta_bound_bennett(e_small, 0.2, 5000, 50, 20) <= 1e-6
    assert delta_bound_bennett(e_small - 2e-4, 0.2, 5000, 50, 20) > 1e-6
    # no amplification: fall back to the pure local guarantee
    assert epsilon_for_delta(1e-4, "hoeffding", sigma=0.2, T=20, n=2, d=0) == epsilon_local(0.2, 0, 20)
    assert epsilon_for_delta(1e-4, "hoeffding", sigma=1.0, T=20, n=5, d=5) == 0.0


def test_bennett_not_worse_than_hoeffding():
    kw = dict(sigma=0.2, T=20, n=500, d=50)
    assert epsilon_for_delta(1e-4, "bennett", **kw) <= epsilon_for_delta(1e-4, "hoeffding", **kw)


def test_sigma_zero_search():
    eps = epsilon_for_delta(1e-4, "hoeffding", sigma=0.0, T=20, n=1, d=5000)
    assert 0 < eps < acc.EPS_CEILING
    assert epsilon_for_delta(1e-4, "hoeffding", sigma=0.0, T=20, n=1, d=0) == math.inf


# composition

def test_privacy_budget():
    with pytest.raises(ValueError):
        PrivacyBudget(-1.0)
    with pytest.raises(ValueError):
        PrivacyBudget(1.0, 2.0)
    assert PrivacyBudget(1.0, 0.6) + PrivacyBudget(2.0, 0.6) == PrivacyBudget(3.0, 1.0)
    assert PrivacyBudget(1.0, 0.1) <= PrivacyBudget(1.0, 0.2)


def test_compose_running_example():
    b1, b2 = PrivacyBudget(0.7, 1e-5), PrivacyBudget(1.1, 3e-5)
    got = compose_plan(running_example_plan(), {"S1": b1, "S2": b2})
    assert got == PrivacyBudget(0.7 + 1.1, 1e-5 + 3e-5)
    got = compose_plan(running_example_plan(split=True), {"S1": b1, "S2": b2})
    assert got == PrivacyBudget(1.1, 3e-5)


def test_compose_single_and_missing():
    plan = running_example_plan()
    with pytest.raises(ValueError):
        compose_plan(plan, {"S1": PrivacyBudget(1.0)})
    from commdp.model import Cluster, ExecutionPlan, SourceNode
    one = ExecutionPlan((Cluster("A", (SourceNode("a"),), ("t0", "t1")),), (("A",),))
    assert compose_plan(one, {"A": PrivacyBudget(0.3, 1e-6)}) == PrivacyBudget(0.3, 1e-6)


def test_compose_invariant_under_reordering_and_relabeling():
    from dataclasses import replace
    from commdp.model import ExecutionPlan
    plan = running_example_plan(split=True)
    budgets = {"S1": PrivacyBudget(0.4, 1e-6), "S2": PrivacyBudget(0.9, 2e-6)}
    base = compose_plan(plan, budgets)
    reordered = ExecutionPlan(plan.clusters[::-1], plan.paths[::-1])
    assert compose_plan(reordered, budgets) == base
    names = {"S1": "X", "S2": "Y", "C1": "P", "C2": "Q", "R": "Z"}
    relabeled = ExecutionPlan(tuple(replace(c, id=names[c.id]) for c in plan.clusters),
                              tuple(tuple(names[c] for c in p) for p in plan.paths))
    assert compose_plan(relabeled, {names[k]: v for k, v in budgets.items()}) == base
