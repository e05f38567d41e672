"""Formula-versus-oracle checks used by ``commdp verify`` and the tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .accountant import delta_bound_bennett, delta_bound_hoeffding, epsilon_local, epsilon_scrambler_capped
from .mechanisms import MechanismConfig
from .oracle import DEFAULT_CAP, worst_case_over_neighbors

SOUNDNESS_EPSILONS = (0.5, 1.0, 2.0)
RATIO_TOL = {"local": 1e-9, "capped": 1e-6}


@dataclass
class Check:
    name: str
    params: dict
    expected: float
    observed: float
    passed: bool
    kind: str = "equality"  # or "bound": observed must not exceed expected

    @property
    def abs_dev(self) -> float:
        return abs(self.expected - self.observed)

    @property
    def rel_dev(self) -> float:
        return self.abs_dev / abs(self.observed) if self.observed else math.inf if self.abs_dev else 0.0

    def line(self) -> str:
        p = " ".join(f"{k}={v}" for k, v in self.params.items())
        return (f"{'PASS' if self.passed else 'FAIL'} {self.name} {p} "
                f"expected={self.expected:.12g} observed={self.observed:.12g} abs={self.abs_dev:.3g}")


@dataclass
class VerifyReport:
    checks: list[Check] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def max_abs(self) -> float:
        """Largest formula-oracle gap over the equality checks."""
        return max((c.abs_dev for c in self.checks if c.kind == "equality"), default=0.0)

    @property
    def max_rel(self) -> float:
        return max((c.rel_dev for c in self.checks if c.kind == "equality"), default=0.0)

    @property
    def max_excess(self) -> float:
        """Largest amount by which an exact divergence exceeds its bound (<= 0 is sound)."""
        return max((c.observed - c.expected for c in self.checks if c.kind == "bound"), default=-math.inf)

    def summary(self) -> str:
        bad = sum(not c.passed for c in self.checks)
        text = f"{len(self.checks) - bad}/{len(self.checks)} checks passed"
        if any(c.kind == "equality" for c in self.checks):
            text += f"; max abs deviation {self.max_abs:.3g}, max rel deviation {self.max_rel:.3g}"
        if any(c.kind == "bound" for c in self.checks):
            text += f"; max bound excess {self.max_excess:.3g}"
        return text


def check_local(sigma: float, d: int, T: int, epsilon_offset: float = 0.0, cap: int = DEFAULT_CAP) -> Check:
    """exp(epsilon_local) against the worst-case ratio of the exact local law."""
    scan = worst_case_over_neighbors(MechanismConfig(sigma, d, T), "ratio", cap=cap)
    expected = math.exp(epsilon_local(sigma, d, T) + epsilon_offset)
    ok = abs(expected - scan.value) <= RATIO_TOL["local"] * max(1.0, scan.value)
    return Check("local", {"sigma": sigma, "d": d, "T": T}, expected, scan.value, ok)


def check_capped(sigma: float, d: int, n: int, T: int, epsilon_offset: float = 0.0,
                 cap: int = DEFAULT_CAP) -> Check:
    """exp(epsilon_scrambler_capped) against the worst case over all neighboring batches."""
    scan = worst_case_over_neighbors(MechanismConfig(sigma, d, T, n=n, capped=True), "ratio", cap=cap)
    expected = math.exp(epsilon_scrambler_capped(sigma, d, n, T) + epsilon_offset)
    ok = abs(expected - scan.value) <= RATIO_TOL["capped"] * max(1.0, scan.value)
    return Check("capped", {"sigma": sigma, "d": d, "n": n, "T": T}, expected, scan.value, ok)


def check_soundness(method: str, sigma: float, d: int, n: int, T: int, epsilon: float,
                    cap: int = DEFAULT_CAP) -> Check:
    """Exact hockey-stick divergence of the uncapped batch must not exceed the bound."""
    bound_fn = {"hoeffding": delta_bound_hoeffding, "bennett": delta_bound_bennett}[method]
    scan = worst_case_over_neighbors(MechanismConfig(sigma, d, T, n=n), "divergence", epsilon, cap=cap)
    bound = bound_fn(epsilon, sigma, n, d, T)
    return Check(method, {"sigma": sigma, "d": d, "n": n, "T": T, "epsilon": epsilon},
                 bound, scan.value, scan.value <= bound + 1e-12, kind="bound")


def small_instances():
    """(n, T, d, sigma) grid of the small-instance suites."""
    for n in (2, 3, 4):
        for T in (3, 4):
            for d in range(1, min(3, n - 1) + 1):
                for sigma in (0.2, 0.5, 0.8):
                    yield n, T, d, sigma


SUITES = ("local", "capped", "hoeffding", "bennett")
# the capped closed form is reported separately; see the README
DEFAULT_SUITE = ("local", "hoeffding", "bennett")


def run_suite(names=DEFAULT_SUITE, epsilon_offset: float = 0.0) -> VerifyReport:
    rep = VerifyReport()
    for name in names:
        if name not in SUITES:
            raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")
        if name == "local":
            for sigma in (0.1, 0.3, 0.5, 0.7, 0.9):
                for T in (3, 4, 5):
                    for d in range(T):
                        rep.checks.append(check_local(sigma, d, T, epsilon_offset))
        elif name == "capped":
            for n, T, d, sigma in small_instances():
                rep.checks.append(check_capped(sigma, d, n, T, epsilon_offset))
        else:
            for n, T, d, sigma in small_instances():
                for eps in SOUNDNESS_EPSILONS:
                    rep.checks.append(check_soundness(name, sigma, d, n, T, eps))
    return rep


def verify_instance(check: str, sigma: float, d: int, T: int, n: int | None = None,
                    epsilon_offset: float = 0.0, cap: int = DEFAULT_CAP) -> VerifyReport:
    """One user-specified instance; raises EnumerationCapExceeded when too large."""
    rep = VerifyReport()
    if check == "local":
        rep.checks.append(check_local(sigma, d, T, epsilon_offset, cap))
    elif check == "capped":
        if n is None:
            raise ValueError("the capped check needs n")
        rep.checks.append(check_capped(sigma, d, n, T, epsilon_offset, cap))
    elif check in ("hoeffding", "bennett"):
        if n is None:
            raise ValueError(f"the {check} check needs n")
        for eps in SOUNDNESS_EPSILONS:
            rep.checks.append(check_soundness(check, sigma, d, n, T, eps, cap))
    else:
        raise ValueError(f"unknown check {check!r}; choose from {SUITES}")
    return rep
