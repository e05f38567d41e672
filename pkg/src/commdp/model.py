"""Execution plans, clusters and communication graphs.

A communication graph is what the adversary sees inside one cluster: an
ordered list of (source id, target id) messages over a fixed target
universe. Plans group nodes into clusters and list the cluster sequences
a data item can traverse, which is all that budget composition needs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np


class Role(str, Enum):
    SOURCE = "source"
    SCRAMBLER = "scrambler"
    TARGET = "target"
    RESULT = "result"


@dataclass(frozen=True)
class NodeId:
    """A node identifier with its role in the plan."""

    id: str
    role: Role = Role.SOURCE

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))

    def __str__(self) -> str:
        return self.id


def _node_str(x) -> str:
    return x.id if isinstance(x, NodeId) else str(x)


@dataclass(frozen=True)
class CommunicationGraph:
    """Ordered (source, target) messages over a target universe of size T >= 2."""

    messages: tuple[tuple[str, str], ...]
    targets: tuple[str, ...]

    def __post_init__(self):
        msgs = tuple((_node_str(s), _node_str(t)) for s, t in self.messages)
        tg = tuple(_node_str(t) for t in self.targets)
        object.__setattr__(self, "messages", msgs)
        object.__setattr__(self, "targets", tg)
        if len(tg) < 2:
            raise ValueError("target universe must contain at least 2 targets")
        if len(set(tg)) != len(tg):
            raise ValueError("target universe contains duplicates")
        if not msgs:
            raise ValueError("a communication graph needs at least one message")
        universe = set(tg)
        for pos, (_, t) in enumerate(msgs):
            if t not in universe:
                raise ValueError(f"message {pos} targets {t!r}, outside the target universe")

    @classmethod
    def from_indices(cls, target_idx: Sequence[int], T: int, prefix: str = "s") -> "CommunicationGraph":
        """Graph with sources ``{prefix}0..`` and targets ``t0..t{T-1}``."""
        targets = tuple(f"t{j}" for j in range(T))
        msgs = tuple((f"{prefix}{i}", targets[int(j)]) for i, j in enumerate(target_idx))
        return cls(msgs, targets)

    @property
    def S(self) -> int:
        return len(self.messages)

    @property
    def T(self) -> int:
        return len(self.targets)

    def target_index(self, target) -> int:
        return self.targets.index(_node_str(target))

    def target_indices(self) -> np.ndarray:
        lookup = {t: j for j, t in enumerate(self.targets)}
        return np.array([lookup[t] for _, t in self.messages], dtype=np.int64)

    def counts(self) -> np.ndarray:
        """Per-target message counts, ordered like ``targets``."""
        return np.bincount(self.target_indices(), minlength=self.T)


def neighboring_graph(g: CommunicationGraph, index: int, new_target) -> CommunicationGraph:
    """Copy of ``g`` where message ``index`` is redirected to ``new_target``."""
    if not 0 <= index < g.S:
        raise IndexError(f"message index {index} out of range for S={g.S}")
    new_target = _node_str(new_target)
    if new_target not in g.targets:
        raise ValueError(f"{new_target!r} is not in the target universe")
    src, old = g.messages[index]
    if new_target == old:
        raise ValueError("new target equals the current target; graphs would not be neighbors")
    msgs = list(g.messages)
    msgs[index] = (src, new_target)
    return CommunicationGraph(tuple(msgs), g.targets)


@dataclass(frozen=True)
class SourceNode:
    """A logical source emitting one message.

    ``base`` is the physical node id, ``order`` the message order number on
    that node and ``data`` the key of the data item the message depends on.
    ``targets`` overrides the cluster's universe (normally left as None).
    """

    id: str
    base: str | None = None
    order: int = 0
    data: str | None = None
    messages: int = 1
    targets: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.base is None:
            object.__setattr__(self, "base", self.id)
        if self.targets is not None:
            object.__setattr__(self, "targets", tuple(self.targets))


def split_logical_sources(base: str, k: int, data: Sequence[str] | None = None) -> tuple[SourceNode, ...]:
    """Split a physical node with ``k`` data-dependent messages into ``k`` logical sources."""
    if k < 1:
        raise ValueError("k must be positive")
    keys = list(data) if data is not None else [f"{base}/{j}" for j in range(k)]
    if len(keys) != k:
        raise ValueError("need one data key per message")
    return tuple(SourceNode(f"{base}#{j}", base=base, order=j, data=keys[j]) for j in range(k))


@dataclass(frozen=True)
class Cluster:
    """Sources sharing a target universe, optionally fronted by scramblers.

    ``assignment[i]`` is the index into ``scramblers`` of source ``i``; every
    scrambler must receive exactly the same number of sources.
    """

    id: str
    sources: tuple[SourceNode, ...]
    targets: tuple[str, ...]
    scramblers: tuple[str, ...] = ()
    assignment: tuple[int, ...] = ()
    data_independent: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "targets", tuple(_node_str(t) for t in self.targets))
        object.__setattr__(self, "scramblers", tuple(self.scramblers))
        object.__setattr__(self, "assignment", tuple(int(a) for a in self.assignment))
        ids = [s.id for s in self.sources]
        if len(set(ids)) != len(ids):
            raise ValueError(f"cluster {self.id}: duplicate source ids")
        if len(set(self.targets)) != len(self.targets):
            raise ValueError(f"cluster {self.id}: duplicate target ids")
        if self.scramblers:
            if len(self.assignment) != len(self.sources):
                raise ValueError(f"cluster {self.id}: assignment must list one scrambler per source")
            sizes = np.bincount(np.asarray(self.assignment, dtype=np.int64), minlength=len(self.scramblers))
            if len(sizes) != len(self.scramblers) or min(self.assignment, default=0) < 0:
                raise ValueError(f"cluster {self.id}: assignment references an unknown scrambler")
            if np.any(sizes != sizes[0]) or sizes[0] == 0:
                raise ValueError(f"cluster {self.id}: scrambler groups must all have exactly n sources")
        elif self.assignment:
            raise ValueError(f"cluster {self.id}: assignment given without scramblers")

    @property
    def n(self) -> int | None:
        """Scrambler group size, or None without scramblers."""
        if not self.scramblers:
            return None
        return len(self.sources) // len(self.scramblers)

    def groups(self) -> list[list[int]]:
        """Source positions handled by each scrambler."""
        out: list[list[int]] = [[] for _ in self.scramblers]
        for i, a in enumerate(self.assignment):
            out[a].append(i)
        return out

    def graph(self, chosen: Sequence) -> CommunicationGraph:
        """Communication graph where source ``i`` sends to ``chosen[i]`` (ids or indices)."""
        if len(chosen) != len(self.sources):
            raise ValueError("need one target per source")
        tg = [self.targets[c] if isinstance(c, (int, np.integer)) else _node_str(c) for c in chosen]
        return CommunicationGraph(tuple((s.id, t) for s, t in zip(self.sources, tg)), self.targets)


@dataclass(frozen=True)
class ExecutionPlan:
    """Clusters plus the distinct cluster sequences traversed by data items."""

    clusters: tuple[Cluster, ...]
    paths: tuple[tuple[str, ...], ...]
    scrambler_group_size: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        object.__setattr__(self, "paths", tuple(tuple(p) for p in self.paths))
        ids = [c.id for c in self.clusters]
        if len(set(ids)) != len(ids):
            raise ValueError("cluster ids must be unique")
        known = set(ids)
        for p in self.paths:
            missing = [c for c in p if c not in known]
            if missing:
                raise ValueError(f"path {p} references unknown clusters {missing}")
            if len(set(p)) != len(p):
                raise ValueError(f"path {p} repeats a cluster; unroll iterations into distinct clusters")

    def cluster(self, cid: str) -> Cluster:
        for c in self.clusters:
            if c.id == cid:
                return c
        raise KeyError(cid)

    @property
    def cluster_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.clusters)


@dataclass(frozen=True)
class Violation:
    cluster: str
    kind: str
    detail: str


@dataclass
class ValidationReport:
    """Per-cluster check results; ``violations`` is empty for a valid plan."""

    violations: list[Violation] = field(default_factory=list)
    checked: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def for_cluster(self, cid: str) -> list[Violation]:
        return [v for v in self.violations if v.cluster == cid]


def validate_cluster_decomposition(plan: ExecutionPlan) -> ValidationReport:
    """Check the conditions that make each cluster a unit of local DP analysis."""
    rep = ValidationReport()
    for c in plan.clusters:
        rep.checked.append(c.id)
        universe = set(c.targets)
        seen_data: dict[str, str] = {}
        for s in c.sources:
            if s.targets is not None and set(s.targets) != universe:
                rep.violations.append(Violation(
                    c.id, "target-universe",
                    f"source {s.id} has {len(s.targets)} targets, cluster has {len(universe)}"))
            if s.messages != 1:
                rep.violations.append(Violation(
                    c.id, "multi-message", f"source {s.id} emits {s.messages} messages; split it first"))
            key = s.data if s.data is not None else s.id
            if key in seen_data:
                rep.violations.append(Violation(
                    c.id, "shared-data", f"sources {seen_data[key]} and {s.id} depend on data {key!r}"))
            seen_data.setdefault(key, s.id)
        if plan.scrambler_group_size is not None and c.n is not None and c.n != plan.scrambler_group_size:
            rep.violations.append(Violation(
                c.id, "group-size", f"scrambler groups of {c.n}, plan says {plan.scrambler_group_size}"))
    by_id = {c.id: c for c in plan.clusters}
    for p in plan.paths:
        owner: dict[tuple[str, int], str] = {}
        for cid in p:
            for s in by_id[cid].sources:
                tag = (s.base, s.order)
                if tag in owner and owner[tag] != cid:
                    rep.violations.append(Violation(
                        cid, "not-disjoint",
                        f"source {s.base} message {s.order} also belongs to {owner[tag]} on path {p}"))
                owner.setdefault(tag, cid)
    return rep


def running_example_plan(users: int = 6, compute_nodes: int = 2, split: bool = False) -> ExecutionPlan:
    """Two grouping sets, two compute clusters and one result node.

    Every user contributes to both grouping sets unless ``split`` is set, in
    which case the first half only feeds grouping set 1 and the rest set 2.
    """
    c1 = tuple(f"c1_{j}" for j in range(compute_nodes))
    c2 = tuple(f"c2_{j}" for j in range(compute_nodes))
    if split:
        half = users // 2
        s1 = tuple(SourceNode(f"u{i}#0", base=f"u{i}", order=0, data=f"u{i}") for i in range(half))
        s2 = tuple(SourceNode(f"u{i}#0", base=f"u{i}", order=0, data=f"u{i}") for i in range(half, users))
        paths = (("S1", "C1", "R"), ("S2", "C2", "R"))
    else:
        logical = [split_logical_sources(f"u{i}", 2) for i in range(users)]
        s1 = tuple(ls[0] for ls in logical)
        s2 = tuple(ls[1] for ls in logical)
        paths = (("S1", "S2", "C1", "C2", "R"),)
    clusters = (
        Cluster("S1", s1, c1),
        Cluster("S2", s2, c2),
        Cluster("C1", tuple(SourceNode(c) for c in c1), ("r",), data_independent=True),
        Cluster("C2", tuple(SourceNode(c) for c in c2), ("r",), data_independent=True),
        Cluster("R", (SourceNode("r"),), (), data_independent=True),
    )
    return ExecutionPlan(clusters, paths)


# plan description files

def plan_to_dict(plan: ExecutionPlan) -> dict:
    sources: dict[str, SourceNode] = {}
    for c in plan.clusters:
        for s in c.sources:
            if s.id in sources and sources[s.id] != s:
                raise ValueError(f"source id {s.id} is defined twice with different attributes")
            sources[s.id] = s
    targets = sorted({t for c in plan.clusters for t in c.targets})

    def src(s: SourceNode) -> dict:
        d = {"id": s.id, "base": s.base, "order": s.order, "data": s.data, "messages": s.messages}
        if s.targets is not None:
            d["targets"] = list(s.targets)
        return d

    return {
        "scrambler_group_size": plan.scrambler_group_size,
        "targets": targets,
        "sources": [src(s) for s in sources.values()],
        "clusters": [
            {
                "id": c.id,
                "sources": [s.id for s in c.sources],
                "targets": list(c.targets),
                "scramblers": list(c.scramblers),
                "assignment": list(c.assignment),
                "data_independent": c.data_independent,
            }
            for c in plan.clusters
        ],
        "paths": [list(p) for p in plan.paths],
    }


def plan_from_dict(doc: dict) -> ExecutionPlan:
    required = {"clusters", "paths", "targets", "sources", "scrambler_group_size"}
    missing = required - set(doc)
    if missing:
        raise ValueError(f"plan document is missing keys {sorted(missing)}")
    universe = set(doc["targets"])
    sources = {}
    for d in doc["sources"]:
        tg = d.get("targets")
        sources[d["id"]] = SourceNode(
            d["id"], base=d.get("base"), order=int(d.get("order", 0)), data=d.get("data"),
            messages=int(d.get("messages", 1)), targets=tuple(tg) if tg is not None else None)
    clusters = []
    for c in doc["clusters"]:
        unknown = set(c["targets"]) - universe
        if unknown:
            raise ValueError(f"cluster {c['id']} uses undeclared targets {sorted(unknown)}")
        clusters.append(Cluster(
            c["id"], tuple(sources[s] for s in c["sources"]), tuple(c["targets"]),
            scramblers=tuple(c.get("scramblers", ())), assignment=tuple(c.get("assignment", ())),
            data_independent=bool(c.get("data_independent", False))))
    return ExecutionPlan(tuple(clusters), tuple(tuple(p) for p in doc["paths"]), doc["scrambler_group_size"])


def save_plan(plan: ExecutionPlan, path: str | Path) -> None:
    Path(path).write_text(json.dumps(plan_to_dict(plan), indent=1) + "\n")


def load_plan(path: str | Path) -> ExecutionPlan:
    return plan_from_dict(json.loads(Path(path).read_text()))

