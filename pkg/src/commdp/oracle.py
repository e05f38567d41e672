"""Brute-force ground truth for small instances.

Exact output laws are built by dynamic programming over per-target count
vectors: first every source's sampling outcome, then the scrambler's dummy
draws one at a time (so the capped variant sees the running counts).
Small instances use exact rationals, larger ones floats with compensated
summation.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator

import numpy as np
from scipy.special import gammaln

from .mechanisms import MechanismConfig, sample_batch_counts
from .model import CommunicationGraph
from .rng import RngSeed, as_generator

DEFAULT_CAP = 10**7
EXACT_LIMIT = 12  # use rationals when n*(d+1) <= EXACT_LIMIT


class EnumerationCapExceeded(RuntimeError):
    """The instance is too large to enumerate."""




@dataclass
class OutputDistribution:
    """Exact law over canonical outputs (one count vector per batch)."""

    entries: dict
    exact: bool = False

    def total(self):
        if self.exact:
            return sum(self.entries.values(), Fraction(0))
        return math.fsum(self.entries.values())

    def __getitem__(self, o) -> float | Fraction:
        return self.entries.get(o, 0)

    def __len__(self) -> int:
        return len(self.entries)

    def support(self) -> set:
        return {o for o, p in self.entries.items() if p > 0}

    def expected_counts(self) -> np.ndarray:
        """Mean per-target count of every batch, shape (batches, T)."""
        keys = list(self.entries)
        arr = np.array(keys, dtype=float)
        w = np.array([float(self.entries[k]) for k in keys])
        return np.tensordot(w, arr, axes=1)

    def to_jsonl(self) -> str:
        lines = []
        for o in sorted(self.entries):
            p = self.entries[o]
            lines.append(json.dumps({"output": [list(b) for b in o],
                                     "p": str(p) if self.exact else float(p)}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "OutputDistribution":
        entries, exact = {}, False
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            key = tuple(tuple(b) for b in rec["output"])
            if isinstance(rec["p"], str):
                exact = True
                entries[key] = Fraction(rec["p"])
            else:
                entries[key] = float(rec["p"])
        return cls(entries, exact)


def _num(x, exact: bool):
    if not exact:
        return float(x)
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(repr(float(x)))


def _states_bound(total: int, T: int) -> int:
    """Number of count vectors of length T summing to ``total``."""
    return math.comb(total + T - 1, T - 1)


class _Acc:
    """Accumulator mapping states to probability; floats use fsum."""

    def __init__(self, exact: bool):
        self.exact = exact
        self.data: dict = defaultdict(Fraction) if exact else defaultdict(list)

    def add(self, state, p):
        if self.exact:
            self.data[state] += p
        else:
            self.data[state].append(p)

    def result(self) -> dict:
        if self.exact:
            return dict(self.data)
        return {s: math.fsum(v) for s, v in self.data.items()}


def batch_distribution(counts, cfg: MechanismConfig, exact: bool | None = None,
                       cap: int = DEFAULT_CAP) -> dict:
    """Exact law of one scrambler batch given the input per-target counts.

    Returns a dict from count tuples to probabilities.
    """
    counts = tuple(int(c) for c in counts)
    T = cfg.T
    if len(counts) != T:
        raise ValueError("counts must have length T")
    n = sum(counts)
    d = cfg.d
    if exact is None:
        exact = n * (d + 1) <= EXACT_LIMIT
    bound = _states_bound(n + d, T)
    if bound * T > cap:
        raise EnumerationCapExceeded(
            f"instance exceeds enumeration cap: up to {bound} states x {T} targets > {cap}")
    sigma = _num(cfg.sigma, exact)
    one = _num(1, exact)
    p_other = sigma / T
    p_keep = one - sigma + p_other
    state = {(0,) * T: one}
    for t, c in enumerate(counts):
        for _ in range(c):
            acc = _Acc(exact)
            for s, p in state.items():
                for j in range(T):
                    q = p_keep if j == t else p_other
                    if q == 0:
                        continue
                    ns = list(s)
                    ns[j] += 1
                    acc.add(tuple(ns), p * q)
            state = acc.result()
    for _ in range(d):
        acc = _Acc(exact)
        for s, p in state.items():
            cand = [j for j in range(T) if not cfg.capped or s[j] < n]
            if not cand:
                raise ValueError("capped scrambler ran out of targets; need d <= n*T - n")
            q = p / len(cand)
            for j in cand:
                ns = list(s)
                ns[j] += 1
                acc.add(tuple(ns), q)
        state = acc.result()
    return state


def local_distribution(t: int, cfg: MechanismConfig, exact: bool = True, cap: int = DEFAULT_CAP) -> dict:
    """Exact law of the target set chosen by the local randomizer, as 0/1 count tuples.

    Enumerates the first target and every ordered sequence of d distinct dummies.
    """
    T, d = cfg.T, cfg.d
    if d > T - 1:
        raise ValueError("flooding needs d <= T-1")
    seqs = math.perm(T - 1, d)
    if T * seqs > cap:
        raise EnumerationCapExceeded(f"instance exceeds enumeration cap: {T * seqs} sequences > {cap}")
    sigma = _num(cfg.sigma, exact)
    one = _num(1, exact)
    acc = _Acc(exact)
    for t0 in range(T):
        p0 = sigma / T + (one - sigma if t0 == t else 0)
        if p0 == 0:
            continue
        rest = [j for j in range(T) if j != t0]
        q = p0 / seqs
        for seq in itertools.permutations(rest, d):
            v = [0] * T
            v[t0] = 1
            for j in seq:
                v[j] = 1
            acc.add(tuple(v), q)
    return acc.result()


def _product(dists: list[dict], exact: bool, cap: int) -> dict:
    size = math.prod(len(x) for x in dists)
    if size > cap:
        raise EnumerationCapExceeded(f"instance exceeds enumeration cap: {size} joint outputs > {cap}")
    out = {(): _num(1, exact)}
    for dist in dists:
        out = {o + (k,): p * q for o, p in out.items() for k, q in dist.items()}
    return out


def exact_output_distribution(g: CommunicationGraph, cfg: MechanismConfig, cap: int = DEFAULT_CAP,
                              exact: bool | None = None) -> OutputDistribution:
    """Exact law of the observable output of the cluster mechanism on ``g``.

    Args:
        g: input communication graph (S messages over T targets).
        cfg: mechanism parameters; local mode when ``cfg.n`` is None.
        cap: enumeration budget; larger instances raise EnumerationCapExceeded.
        exact: force rationals (True) or floats (False); default picks
            rationals when n*(d+1) <= 12.
    """
    if cfg.T != g.T:
        raise ValueError("config and graph disagree on T")
    idx = g.target_indices()
    if cfg.local:
        ex = True if exact is None else exact
        cache: dict[int, dict] = {}
        dists = []
        for t in idx:
            if int(t) not in cache:
                cache[int(t)] = local_distribution(int(t), cfg, ex, cap)
            dists.append(cache[int(t)])
        return OutputDistribution(_product(dists, ex, cap), ex)
    n = cfg.n
    if g.S % n:
        raise ValueError(f"S={g.S} is not divisible by n={n}")
    ex = (n * (cfg.d + 1) <= EXACT_LIMIT) if exact is None else exact
    dists = []
    for k in range(g.S // n):
        counts = np.bincount(idx[k * n:(k + 1) * n], minlength=cfg.T)
        dists.append(batch_distribution(counts, cfg, ex, cap))
    return OutputDistribution(_product(dists, ex, cap), ex)


def _as_dist(p) -> tuple[dict, bool]:
    if isinstance(p, OutputDistribution):
        return p.entries, p.exact
    return dict(p), False


def worst_case_ratio(p, q) -> float:
    """max_o p(o)/q(o); infinite if p puts mass where q has none."""
    pe, _ = _as_dist(p)
    qe, _ = _as_dist(q)
    best = 0.0
    for o, po in pe.items():
        if po <= 0:
            continue
        qo = qe.get(o, 0)
        if qo <= 0:
            return math.inf
        best = max(best, float(Fraction(po) / Fraction(qo)) if isinstance(po, Fraction) else po / qo)
    return best


def max_log_ratio(p, q) -> float:
    """ln of the worst-case ratio over both orderings."""
    return math.log(max(worst_case_ratio(p, q), worst_case_ratio(q, p)))


def hockey_stick_divergence(p, q, epsilon: float) -> float:
    """sum_o [p(o) - e^epsilon q(o)]_+."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    pe, _ = _as_dist(p)
    qe, _ = _as_dist(q)
    e = math.exp(epsilon)
    terms = []
    for o, po in pe.items():
        v = float(po) - e * float(qe.get(o, 0))
        if v > 0:
            terms.append(v)
    return min(1.0, math.fsum(terms))


def neighboring_count_pairs(n: int, T: int) -> Iterator[tuple[tuple[int, ...], tuple[int, ...]]]:
    """All ordered pairs of batch inputs that differ in one message's target."""
    for rest in _compositions(n - 1, T):
        for t in range(T):
            for tp in range(T):
                if t == tp:
                    continue
                a = list(rest)
                b = list(rest)
                a[t] += 1
                b[tp] += 1
                yield tuple(a), tuple(b)


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for tail in _compositions(total - first, parts - 1):
            yield (first,) + tail


@dataclass
class NeighborScan:
    """Worst case over all neighboring batch inputs."""

    value: float
    pair: tuple
    pairs_checked: int


def worst_case_over_neighbors(cfg: MechanismConfig, metric: str = "ratio", epsilon: float | None = None,
                              exact: bool | None = None, cap: int = DEFAULT_CAP) -> NeighborScan:
    """Scan every neighboring pair of one scrambler batch (or one local source).

    Args:
        metric: "ratio" for the worst-case probability ratio or "divergence"
            for the hockey-stick divergence at ``epsilon``.
    """
    if metric not in ("ratio", "divergence"):
        raise ValueError("metric must be 'ratio' or 'divergence'")
    if metric == "divergence" and epsilon is None:
        raise ValueError("divergence needs epsilon")
    cache: dict = {}

    def law(counts):
        if counts not in cache:
            if cfg.local:
                cache[counts] = local_distribution(counts.index(1), cfg, True if exact is None else exact, cap)
            else:
                cache[counts] = batch_distribution(counts, cfg, exact, cap)
        return cache[counts]

    n = 1 if cfg.local else cfg.n
    best, arg, checked = -math.inf, None, 0
    for a, b in neighboring_count_pairs(n, cfg.T):
        p, q = law(a), law(b)
        v = worst_case_ratio(p, q) if metric == "ratio" else hockey_stick_divergence(p, q, epsilon)
        checked += 1
        if v > best:
            best, arg = v, (a, b)
    return NeighborScan(best, arg, checked)


# exact tail of the amplification variable

def amplification_tail_exact(epsilon: float, sigma: float, T: int, k: int) -> float:
    """E[sum_{i<=k} L_i]_+ by enumerating how many draws hit t and t'."""
    e = math.exp(epsilon)
    i = np.arange(k + 1)[:, None]
    j = np.arange(k + 1)[None, :]
    ok = i + j <= k
    rest = np.where(ok, k - i - j, 0)
    logp = (gammaln(k + 1) - gammaln(i + 1) - gammaln(j + 1) - gammaln(rest + 1)
            + (i + j) * math.log(1.0 / T))
    if T > 2:
        logp = logp + rest * math.log((T - 2) / T)
    else:
        logp = np.where(rest > 0, -np.inf, logp)
    val = k * sigma * (1.0 - e) + (1.0 - sigma) * T * (i - e * j)
    mask = ok & (val > 0)
    return math.fsum((np.exp(logp[mask]) * val[mask]).tolist())


def delta_exact_tail(epsilon: float, sigma: float, n: int, d: int, T: int) -> float:
    """Mixture delta with every tail term computed exactly."""
    total = []
    for m in range(n):
        w = math.comb(n - 1, m) * sigma**m * (1.0 - sigma) ** (n - 1 - m)
        if w == 0:
            continue
        k = m + d + 1
        total.append(w * amplification_tail_exact(epsilon, sigma, T, k) / k)
    return min(1.0, math.fsum(total))


# empirical histograms

@dataclass
class LogRatio:
    output: tuple
    c1: int
    c2: int
    value: float

    @property
    def infinite(self) -> bool:
        return math.isinf(self.value)


@dataclass
class HistogramPair:
    """Output counts of two neighboring inputs over the same number of runs."""

    counts_g1: dict
    counts_g2: dict
    runs: int

    def log_ratios(self) -> list[LogRatio]:
        """r(o) = ln max(c1/c2, c2/c1) per observed output, most frequent first."""
        out = []
        for o in set(self.counts_g1) | set(self.counts_g2):
            c1, c2 = self.counts_g1.get(o, 0), self.counts_g2.get(o, 0)
            r = math.inf if min(c1, c2) == 0 else abs(math.log(c1 / c2))
            out.append(LogRatio(o, c1, c2, r))
        out.sort(key=lambda x: (-(x.c1 + x.c2), x.output))
        return out

    def to_jsonl(self) -> str:
        lines = [json.dumps({"output": list(o), "c1": self.counts_g1.get(o, 0), "c2": self.counts_g2.get(o, 0)})
                 for o in sorted(set(self.counts_g1) | set(self.counts_g2))]
        return "\n".join(lines) + "\n"


def _count_rows(rows: np.ndarray) -> dict:
    uniq, cnt = np.unique(rows, axis=0, return_counts=True)
    return {tuple(int(x) for x in u): int(c) for u, c in zip(uniq, cnt)}


def _stream(rng, label):
    if isinstance(rng, RngSeed):
        return rng.generator(label)
    return as_generator(rng)


def empirical_output_histogram(g1: CommunicationGraph, g2: CommunicationGraph, cfg: MechanismConfig,
                               runs: int, rng=None, backend: str | None = None) -> HistogramPair:
    """Run one scrambler batch ``runs`` times on each input and count outputs."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    rows1 = sample_batch_counts(g1.target_indices(), cfg, runs, _stream(rng, "g1"), backend=backend)
    rows2 = sample_batch_counts(g2.target_indices(), cfg, runs, _stream(rng, "g2"), backend=backend)
    return HistogramPair(_count_rows(rows1), _count_rows(rows2), runs)


@dataclass
class CoverageReport:
    """New-output fractions of batches 2..B (capture-recapture)."""

    new_fraction: list[float]
    distinct_per_batch: list[int]
    runs_per_batch: list[int]
    seen: set = field(repr=False, default_factory=set)

    @property
    def last(self) -> float:
        return self.new_fraction[-1]


def coverage_estimate(cfg: MechanismConfig, g: CommunicationGraph, batch_size: int, batches: int,
                      rng=None, backend: str | None = None) -> CoverageReport:
    """Fraction of distinct outputs of batch k that no earlier batch produced."""
    if batches < 2:
        raise ValueError("batches must be >= 2")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    gen = _stream(rng, "coverage")
    seen: set = set()
    new_frac, distinct, sizes = [], [], []
    for k in range(batches):
        rows = sample_batch_counts(g.target_indices(), cfg, batch_size, gen, backend=backend)
        outs = set(_count_rows(rows))
        distinct.append(len(outs))
        sizes.append(int(rows.shape[0]))
        if k:
            new_frac.append(len(outs - seen) / len(outs))
        seen |= outs
    return CoverageReport(new_frac, distinct, sizes, seen)


def total_variation(p, q) -> float:
    """Total variation distance between two distributions given as dicts."""
    pe, _ = _as_dist(p)
    qe, _ = _as_dist(q)
    keys = set(pe) | set(qe)
    return 0.5 * math.fsum(abs(float(pe.get(o, 0)) - float(qe.get(o, 0))) for o in keys)
