"""End-to-end scenario simulation: grouped aggregates and K-means.

Each logical layer (a grouping set, or one K-means iteration) routes every
consenting source's message through the mechanism to its compute node.
Traffic is simulated explicitly and counted; the counts are reported next
to their closed-form predictions. Per-layer randomness comes from a stream
keyed by the layer index.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .accountant import PrivacyBudget, compose_plan, epsilon_for_delta, epsilon_local, epsilon_scrambler_capped
from .model import Cluster, ExecutionPlan, SourceNode
from .rng import RngSeed

INTERVALS = 20
ATTRIBUTES = 4
CSV_COLUMNS = ("scenario", "G_or_I", "S", "S_t", "sigma", "n", "d", "SC", "T", "epsilon", "delta",
               "network_overhead", "channels_total", "channels_max_node", "consents", "utility", "rand_index")


@dataclass(frozen=True)
class ScenarioConfig:
    """Scenario and mechanism parameters.

    Attributes:
        scenario: "aggregate" or "kmeans".
        S: sources needed for full utility (training points for K-means).
        G: grouping sets (aggregate).
        I: iterations and K: centroids (K-means).
        C: compute nodes per layer; defaults to 20 for aggregate and K for K-means.
        n: scrambler group size; None disables scramblers (local mode).
        SC: scramblers per layer, an alternative to n.
        d, sigma: dummies and sampling probability.
        mu: message size in abstract units.
        capped: use the capped scrambler.
        method: accountant used for the per-cluster budget with scramblers.
        delta: per-cluster delta target.
        distribution: "uniform" or "biased" grouping values (aggregate).
        zipf_a: exponent of the biased distribution.
        dim, n_test, center_box: synthetic blob parameters (K-means).
        scale_consents: enrol S/(1-sigma) sources; defaults to True for
            aggregate and False for K-means, whose sampled tuples still reach a centroid.
        seed: master seed.
    """

    scenario: str = "aggregate"
    S: int = 10000
    G: int = 1
    I: int = 10
    K: int = 10
    C: int | None = None
    n: int | None = None
    SC: int | None = None
    d: int = 0
    sigma: float = 0.0
    mu: float = 1.0
    capped: bool = False
    method: str = "bennett"
    delta: float = 1e-4
    distribution: str = "uniform"
    zipf_a: float = 1.1
    dim: int = 16
    n_test: int = 1000
    center_box: float = 10.0
    scale_consents: bool | None = None
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in ("aggregate", "kmeans"):
            raise ValueError("scenario must be 'aggregate' or 'kmeans'")
        if self.C is None:
            object.__setattr__(self, "C", INTERVALS if self.scenario == "aggregate" else self.K)
        if self.scale_consents is None:
            object.__setattr__(self, "scale_consents", self.scenario == "aggregate")
        if self.S < 1:
            raise ValueError("S must be positive")
        if not 0.0 <= self.sigma < 1.0:
            raise ValueError("sigma must lie in [0, 1)")
        if self.d < 0:
            raise ValueError("d must be non-negative")
        if self.n is not None and self.n < 1:
            raise ValueError("n must be positive")
        if self.SC is not None and self.SC < 1:
            raise ValueError("SC must be positive")
        if self.n is not None and self.SC is not None:
            raise ValueError("give n or SC, not both")
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.distribution not in ("uniform", "biased"):
            raise ValueError("distribution must be 'uniform' or 'biased'")
        if self.scenario == "aggregate":
            if not 1 <= self.G <= ATTRIBUTES:
                raise ValueError(f"G must lie in 1..{ATTRIBUTES}")
            if not 2 <= self.C <= INTERVALS:
                raise ValueError(f"C must lie in 2..{INTERVALS} (grouping intervals)")
        else:
            if self.I < 1:
                raise ValueError("I must be positive")
            if self.C != self.K:
                raise ValueError("K-means needs C = K")
            if self.K < 2:
                raise ValueError("K must be >= 2")
            if self.K > self.S:
                raise ValueError("K cannot exceed S")
        if self.n is None and self.SC is None and self.d > self.T - 1:
            raise ValueError(f"local flooding needs d <= T-1 = {self.T - 1}")

    @property
    def scrambled(self) -> bool:
        return self.n is not None or self.SC is not None

    @property
    def T(self) -> int:
        return int(self.C)

    @property
    def layers(self) -> int:
        return self.G if self.scenario == "aggregate" else self.I

    def resolved(self) -> tuple[int, int | None, int]:
        """(S_t, n, SF): consents, group size and scramblers per layer."""
        base = math.ceil(self.S / (1.0 - self.sigma)) if self.scale_consents else self.S
        if self.n is not None:
            n = self.n
        elif self.SC is not None:
            n = math.ceil(base / self.SC)
        else:
            return base, None, 0
        S_t = math.ceil(base / n) * n
        return S_t, n, S_t // n


@dataclass
class Metrics:
    """Utility and efficiency counters of one scenario run.

    ``utility`` counts real tuples reaching their correct compute node in
    the worst layer (a sampled message whose uniform draw hits its true
    target counts as real); ``unsampled`` counts tuples that kept their
    target without sampling. The ``predicted_*`` fields hold the closed forms.
    """

    utility: int
    unsampled: int
    messages_total: int
    network_load: float
    network_overhead: float
    channels_total: int
    channels_max_node: int
    consents: int
    scramblers_per_layer: int
    predicted_messages: int
    predicted_channels: int
    rand_index: float | None = None


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    metrics: Metrics
    budget: PrivacyBudget
    cluster_budget: PrivacyBudget
    aggregates: list = field(default_factory=list, repr=False)

    def row(self) -> dict:
        c, m = self.config, self.metrics
        S_t, n, SF = c.resolved()
        return {
            "scenario": c.scenario, "G_or_I": c.layers, "S": c.S, "S_t": S_t, "sigma": c.sigma,
            "n": "" if n is None else n, "d": c.d, "SC": SF, "T": c.T,
            "epsilon": self.budget.epsilon, "delta": self.budget.delta,
            "network_overhead": m.network_overhead, "channels_total": m.channels_total,
            "channels_max_node": m.channels_max_node, "consents": m.consents, "utility": m.utility,
            "rand_index": "" if m.rand_index is None else m.rand_index,
        }


# datasets

@dataclass
class AggregateData:
    groups: np.ndarray  # (S_t, 4) interval index of each grouping attribute
    values: np.ndarray  # (S_t,) aggregated value


@dataclass
class BlobData:
    X: np.ndarray
    y: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    centers: np.ndarray


def interval_weights(distribution: str, zipf_a: float = 1.1) -> np.ndarray:
    if distribution == "uniform":
        return np.full(INTERVALS, 1.0 / INTERVALS)
    w = 1.0 / np.arange(1, INTERVALS + 1) ** zipf_a
    return w / w.sum()


def interval_to_node(intervals: np.ndarray, C: int) -> np.ndarray:
    """Compute node owning each grouping interval (contiguous partition)."""
    return (np.asarray(intervals) * C) // INTERVALS


def make_aggregate_data(count: int, cfg: ScenarioConfig, rng: np.random.Generator) -> AggregateData:
    w = interval_weights(cfg.distribution, cfg.zipf_a)
    groups = rng.choice(INTERVALS, size=(count, ATTRIBUTES), p=w)
    values = rng.gamma(2.0, 10.0, size=count)
    return AggregateData(groups, values)


def make_blobs(count: int, cfg: ScenarioConfig, rng: np.random.Generator) -> BlobData:
    # unit-variance clusters around centers drawn uniformly from a box
    centers = rng.uniform(-cfg.center_box, cfg.center_box, size=(cfg.K, cfg.dim))
    y = rng.integers(cfg.K, size=count)
    X = centers[y] + rng.normal(size=(count, cfg.dim))
    y_test = rng.integers(cfg.K, size=cfg.n_test)
    X_test = centers[y_test] + rng.normal(size=(cfg.n_test, cfg.dim))
    return BlobData(X, y, X_test, y_test, centers)


# plans

def _layer_cluster(cid: str, prefix: str, S_t: int, n: int | None, SF: int, targets: tuple[str, ...],
                   order: int) -> Cluster:
    sources = tuple(SourceNode(f"u{i}#{order}", base=f"u{i}", order=order, data=f"u{i}/{order}")
                    for i in range(S_t))
    if n is None:
        return Cluster(cid, sources, targets)
    scr = tuple(f"{prefix}_x{k}" for k in range(SF))
    return Cluster(cid, sources, targets, scramblers=scr, assignment=tuple(i // n for i in range(S_t)))


def build_aggregate_plan(cfg: ScenarioConfig) -> tuple[ExecutionPlan, AggregateData]:
    """One source cluster per grouping set, C compute nodes each, one result node."""
    if cfg.scenario != "aggregate":
        raise ValueError("config is not an aggregate scenario")
    S_t, n, SF = cfg.resolved()
    clusters, src_ids, cmp_ids = [], [], []
    for g in range(cfg.G):
        comp = tuple(f"c{g + 1}_{j}" for j in range(cfg.C))
        clusters.append(_layer_cluster(f"S{g + 1}", f"S{g + 1}", S_t, n, SF, comp, g))
        src_ids.append(f"S{g + 1}")
    for g in range(cfg.G):
        comp = tuple(f"c{g + 1}_{j}" for j in range(cfg.C))
        clusters.append(Cluster(f"C{g + 1}", tuple(SourceNode(c) for c in comp), ("r",), data_independent=True))
        cmp_ids.append(f"C{g + 1}")
    clusters.append(Cluster("R", (SourceNode("r"),), (), data_independent=True))
    plan = ExecutionPlan(tuple(clusters), (tuple(src_ids + cmp_ids + ["R"]),), scrambler_group_size=n)
    data = make_aggregate_data(S_t, cfg, RngSeed(cfg.seed).generator("data"))
    return plan, data


def build_kmeans_plan(cfg: ScenarioConfig) -> tuple[ExecutionPlan, BlobData]:
    """I unrolled layers: sources -> K centroid nodes, centroids broadcast back."""
    if cfg.scenario != "kmeans":
        raise ValueError("config is not a K-means scenario")
    S_t, n, SF = cfg.resolved()
    clusters, path = [], []
    for it in range(cfg.I):
        cent = tuple(f"k{it}_{j}" for j in range(cfg.K))
        nxt = tuple(f"u{i}#{it + 1}" for i in range(S_t)) if it + 1 < cfg.I else ("r",)
        clusters.append(_layer_cluster(f"S{it}", f"S{it}", S_t, n, SF, cent, it))
        # the centroid broadcast does not depend on the data
        clusters.append(Cluster(f"K{it}", tuple(SourceNode(c) for c in cent), nxt, data_independent=True))
        path += [f"S{it}", f"K{it}"]
    clusters.append(Cluster("R", (SourceNode("r"),), (), data_independent=True))
    plan = ExecutionPlan(tuple(clusters), (tuple(path + ["R"]),), scrambler_group_size=n)
    data = make_blobs(S_t, cfg, RngSeed(cfg.seed).generator("data"))
    return plan, data


# traffic

@dataclass
class LayerTraffic:
    delivered: np.ndarray  # target reached by each source's own message
    kept: np.ndarray  # True when the message was not sampled
    messages: int
    channels: int
    max_node: int


def _capped_dummies(counts: np.ndarray, cap: int, d: int, gen: np.random.Generator) -> np.ndarray:
    """Add d capped dummies to every row of ``counts`` (one row per scrambler)."""
    counts = counts.copy()
    rows = np.arange(counts.shape[0])
    for _ in range(d):
        cand = counts < cap
        nc = cand.sum(axis=1)
        if np.any(nc == 0):
            raise ValueError("capped scrambler ran out of targets; need d <= n*T - n")
        idx = np.minimum((gen.random(len(nc)) * nc).astype(np.int64), nc - 1)
        counts[rows, np.argmax(np.cumsum(cand, axis=1) > idx[:, None], axis=1)] += 1
    return counts


def simulate_layer(true_targets: np.ndarray, cfg: ScenarioConfig, gen: np.random.Generator) -> LayerTraffic:
    """Send every source's message through the mechanism and count the traffic."""
    S_t, n, SF = cfg.resolved()
    T = cfg.T
    tt = np.asarray(true_targets, dtype=np.int64)
    sampled = gen.random(S_t) < cfg.sigma
    draw = gen.integers(T, size=S_t)
    delivered = np.where(sampled, draw, tt)
    if n is None:
        d = cfg.d
        keys = gen.random((S_t, T))
        keys[np.arange(S_t), delivered] = np.inf
        dummies = np.argsort(keys, axis=1)[:, :d]
        receivers = np.concatenate([delivered[:, None], dummies], axis=1)
        # every message travels on its own (source, target) channel
        pairs = np.unique(np.arange(S_t)[:, None] * T + receivers)
        inbound = np.bincount(pairs % T, minlength=T)
        return LayerTraffic(delivered, ~sampled, receivers.size, pairs.size,
                            int(max(inbound.max(), d + 1)))
    group = np.arange(S_t) // n
    batch = np.zeros((SF, T), dtype=np.int64)
    np.add.at(batch, (group, delivered), 1)
    if cfg.capped:
        batch = _capped_dummies(batch, n, cfg.d, gen)
    else:
        np.add.at(batch, (np.repeat(np.arange(SF), cfg.d), gen.integers(T, size=SF * cfg.d)), 1)
    uplinks = S_t
    downlinks = int(batch.sum())
    # sources hold one channel to their scrambler; scramblers open one to every target
    up_channels = np.unique(np.arange(S_t) * SF + group).size
    down_channels = SF * T
    max_node = max(n + T, SF, 1)
    return LayerTraffic(delivered, ~sampled, uplinks + downlinks, up_channels + down_channels, max_node)


def predicted_counts(cfg: ScenarioConfig) -> tuple[int, int]:
    """Closed-form (messages, channels) per layer."""
    S_t, n, SF = cfg.resolved()
    if n is None:
        return S_t * (cfg.d + 1), S_t * (cfg.d + 1)
    return S_t + SF * (n + cfg.d), S_t + SF * cfg.T


def cluster_budget(cfg: ScenarioConfig, rng=None) -> PrivacyBudget:
    """Budget of one source cluster."""
    S_t, n, SF = cfg.resolved()
    if n is None:
        return PrivacyBudget(epsilon_local(cfg.sigma, cfg.d, cfg.T), 0.0)
    if cfg.method == "exact":
        if not cfg.capped:
            raise ValueError("the exact closed form applies to the capped scrambler")
        return PrivacyBudget(epsilon_scrambler_capped(cfg.sigma, cfg.d, n, cfg.T), 0.0)
    eps = epsilon_for_delta(cfg.delta, cfg.method, sigma=cfg.sigma, T=cfg.T, n=n, d=cfg.d, rng=rng)
    return PrivacyBudget(eps, cfg.delta)


def rand_index(labels_a: Sequence, labels_b: Sequence) -> float:
    """Fraction of point pairs on which two labelings agree."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("labelings must be 1-d and of equal length")
    N = a.size
    if N < 2:
        raise ValueError("need at least two points")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    pairs = lambda x: int(np.sum(x * (x - 1) // 2))
    total = N * (N - 1) // 2
    same_both = pairs(table)
    agree = total + 2 * same_both - pairs(table.sum(axis=1)) - pairs(table.sum(axis=0))
    return agree / total


def nearest(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return np.argmin(((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2), axis=1)


def initial_centroids(X: np.ndarray, K: int, gen: np.random.Generator) -> np.ndarray:
    return X[gen.choice(len(X), size=K, replace=False)].copy()


def run_scenario(plan: ExecutionPlan, cfg: ScenarioConfig, rng=None, data=None) -> ScenarioResult:
    """Simulate the plan end to end and account for its privacy.

    Args:
        plan: plan from ``build_aggregate_plan`` or ``build_kmeans_plan``.
        cfg: the configuration the plan was built from.
        rng: RngSeed or int; defaults to ``cfg.seed``.
        data: dataset returned by the builder; regenerated when omitted.
    """
    seed = rng if isinstance(rng, RngSeed) else RngSeed(cfg.seed if rng is None else int(rng))
    S_t, n, SF = cfg.resolved()
    if plan.scrambler_group_size != n:
        raise ValueError("plan and config disagree on the scrambler group size")
    if data is None:
        data = (build_aggregate_plan if cfg.scenario == "aggregate" else build_kmeans_plan)(cfg)[1]
    src_clusters = [c for c in plan.clusters if not c.data_independent]
    if len(src_clusters) != cfg.layers or any(len(c.sources) != S_t or c.n != n for c in src_clusters):
        raise ValueError("mechanism configuration does not fit the plan")
    traffic, aggregates, ri = [], [], None
    if cfg.scenario == "aggregate":
        for g in range(cfg.G):
            tt = interval_to_node(data.groups[:, g], cfg.C)
            tr = simulate_layer(tt, cfg, seed.generator("layer", g))
            traffic.append(tr)
            real = tr.delivered == tt
            aggregates.append([float(data.values[real & (tr.delivered == j)].mean())
                               if np.any(real & (tr.delivered == j)) else math.nan for j in range(cfg.C)])
        used = [tr.delivered == interval_to_node(data.groups[:, g], cfg.C) for g, tr in enumerate(traffic)]
    else:
        cent = initial_centroids(data.X, cfg.K, seed.generator("init"))
        used = []
        for it in range(cfg.I):
            tt = nearest(data.X, cent)
            tr = simulate_layer(tt, cfg, seed.generator("layer", it))
            traffic.append(tr)
            used.append(tr.delivered == tt)
            # sampled tuples still carry their point and join the centroid they reach
            for k in range(cfg.K):
                members = tr.delivered == k
                if np.any(members):
                    cent[k] = data.X[members].mean(axis=0)
            aggregates.append(cent.copy())
        ri = rand_index(data.y_test, nearest(data.X_test, cent))
    pm, pc = predicted_counts(cfg)
    messages = sum(tr.messages for tr in traffic)
    baseline = cfg.S * cfg.layers * cfg.mu
    cb = cluster_budget(cfg, seed.generator("amplification"))
    budget = compose_plan(plan, {c.id: cb for c in src_clusters})
    metrics = Metrics(
        utility=int(min(u.sum() for u in used)),
        unsampled=int(min(tr.kept.sum() for tr in traffic)),
        messages_total=messages,
        network_load=messages * cfg.mu,
        network_overhead=messages * cfg.mu - baseline,
        channels_total=sum(tr.channels for tr in traffic),
        channels_max_node=max(tr.max_node for tr in traffic),
        consents=S_t,
        scramblers_per_layer=SF,
        predicted_messages=pm * cfg.layers,
        predicted_channels=pc * cfg.layers,
        rand_index=ri,
    )
    return ScenarioResult(cfg, metrics, budget, cb, aggregates)


def simulate(cfg: ScenarioConfig) -> ScenarioResult:
    """Build the plan for ``cfg`` and run it."""
    build = build_aggregate_plan if cfg.scenario == "aggregate" else build_kmeans_plan
    plan, data = build(cfg)
    return run_scenario(plan, cfg, data=data)


# sweeps

CONFIG_FIELDS = {f.name: f.type for f in fields(ScenarioConfig)}


def parse_axis(text: str) -> tuple[str, list]:
    """Parse ``name=lo..hi:step`` or ``name=v1,v2,...`` into a list of values."""
    if "=" not in text:
        raise ValueError(f"axis {text!r} must look like name=values")
    name, spec = (s.strip() for s in text.split("=", 1))
    if name not in CONFIG_FIELDS:
        raise ValueError(f"unknown config key {name!r}")
    numeric = spec.replace("..", " ").replace(":", " ").replace(",", " ")
    conv = float if any(ch in numeric for ch in ".eE") or name in ("sigma", "mu", "delta") else int
    if ".." in spec:
        rng_part, _, step = spec.partition(":")
        lo, hi = rng_part.split("..")
        lo, hi = conv(lo), conv(hi)
        step = conv(step) if step else conv(1)
        if step <= 0:
            raise ValueError("axis step must be positive")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        values = [conv(lo + i * step) if conv is int else round(lo + i * step, 12) for i in range(count)]
    else:
        values = [conv(v) for v in spec.split(",") if v.strip()]
    return name, values


def grid(base: ScenarioConfig, axes: Mapping[str, Sequence]) -> list[ScenarioConfig]:
    """Cartesian product of axis values in axis order (last axis varies fastest)."""
    if not axes:
        return []
    names = list(axes)
    return [replace(base, **dict(zip(names, combo))) for combo in itertools.product(*(axes[k] for k in names))]


def sweep(base: ScenarioConfig, axes: Mapping[str, Sequence], jobs: int = 1) -> list[ScenarioResult]:
    """One scenario run per grid point; rows keep grid order."""
    cfgs = grid(base, axes)
    if jobs > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(simulate, cfgs))
    return [simulate(c) for c in cfgs]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(results: Iterable[ScenarioResult], out: io.TextIOBase, meta: Mapping | None = None) -> None:
    """CSV with the fixed column set; ``meta`` is embedded as leading # lines."""
    if meta is not None:
        out.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        row = r.row()
        w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def results_json(results: Iterable[ScenarioResult], meta: Mapping | None = None) -> str:
    rows = []
    for r in results:
        rows.append({"row": r.row(), "metrics": asdict(r.metrics)})
    return json.dumps({"meta": meta, "rows": rows}, sort_keys=True, indent=1, default=_json_default) + "\n"


def _json_default(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    raise TypeError(type(x))
