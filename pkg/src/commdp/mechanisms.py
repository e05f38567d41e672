"""Randomized communication mechanisms.

* ``local_randomize``: sampling with probability sigma, then flooding with d
  dummies drawn without replacement (the local randomizer R_sigma^d).
* ``scramble``: a scrambler that adds d dummies drawn with replacement and
  shuffles; the capped variant never lets a target exceed n messages.
* ``run_cluster_mechanism``: groups of n sources apply R_sigma (no flooding)
  and each group is scrambled. Without scramblers it falls back to local mode.

Targets are handled as integer indices into the target universe.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .model import CommunicationGraph
from .rng import RngSeed, as_generator


@dataclass(frozen=True)
class MechanismConfig:
    """Mechanism parameters.

    Attributes:
        sigma: sampling probability.
        d: flooding (local mode) or dummy (scrambler) count.
        T: size of the target universe.
        n: scrambler group size; None selects local mode.
        capped: use the capped scrambler.
    """

    sigma: float
    d: int
    T: int
    n: int | None = None
    capped: bool = False

    def __post_init__(self):
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError("sigma must lie in [0, 1]")
        if int(self.d) != self.d or self.d < 0:
            raise ValueError("d must be a non-negative integer")
        if int(self.T) != self.T or self.T < 2:
            raise ValueError("T must be an integer >= 2")
        if self.n is None:
            if self.capped:
                raise ValueError("capping needs a scrambler group size n")
            if self.d > self.T - 1:
                raise ValueError(f"local flooding needs d <= T-1 = {self.T - 1}")
        else:
            if int(self.n) != self.n or self.n < 1:
                raise ValueError("n must be a positive integer")
            if self.capped and self.d > self.n * self.T - self.n:
                raise ValueError("capped scrambler needs d <= n*T - n, otherwise it can run out of targets")

    @property
    def local(self) -> bool:
        return self.n is None


class Message(NamedTuple):
    """One message; ``real`` is internal bookkeeping never shown to the adversary."""

    source: object
    target: object
    real: bool = True


def _randomize_index(t: int, T: int, sigma: float, d: int, rng: np.random.Generator):
    """Return (targets, slot-0 is real) for one message with true target index t."""
    if sigma > 0.0 and rng.random() < sigma:
        t0 = int(rng.integers(T))
    else:
        t0 = t
    out = np.empty(d + 1, dtype=np.int64)
    out[0] = t0
    if d:
        rest = np.delete(np.arange(T, dtype=np.int64), t0)
        out[1:] = rng.choice(rest, size=d, replace=False)
    return out, t0 == t


def local_randomize(message, cfg: MechanismConfig, rng, targets: Sequence | None = None) -> list[Message]:
    """Apply R_sigma^d to one (source, target) message.

    Args:
        message: (source, target) pair; the target is an index when ``targets`` is None.
        cfg: mechanism parameters; ``cfg.d`` dummies are added.
        rng: Generator, RngSeed or int seed.
        targets: optional target universe of length ``cfg.T``.

    Returns:
        d+1 messages with distinct targets; slot 0 carries the (possibly
        sampled) message, the rest are dummies.
    """
    source, target = message[0], message[1]
    T = cfg.T
    if cfg.d > T - 1:
        raise ValueError(f"flooding needs d <= T-1 = {T - 1}")
    if targets is None:
        t = int(target)
        if not 0 <= t < T:
            raise ValueError("target index outside the universe")
    else:
        if len(targets) != T:
            raise ValueError("targets must have length T")
        t = list(targets).index(target)
    out, real = _randomize_index(t, T, cfg.sigma, cfg.d, as_generator(rng))
    name = (lambda j: int(j)) if targets is None else (lambda j: targets[j])
    msgs = [Message(source, name(out[0]), real)]
    msgs.extend(Message(source, name(j), False) for j in out[1:])
    return msgs


def _scramble_index(inputs: np.ndarray, T: int, cap: int, d: int, capped: bool, rng: np.random.Generator):
    """Return (shuffled targets, origin) where origin is the input position or -1 for a dummy."""
    n = len(inputs)
    if capped:
        counts = np.bincount(inputs, minlength=T)
        if np.any(counts > cap):
            raise ValueError("an input target already exceeds the cap")
        dummies = np.empty(d, dtype=np.int64)
        for j in range(d):
            cand = np.flatnonzero(counts < cap)
            if cand.size == 0:
                raise ValueError("capped scrambler ran out of targets; need d <= n*T - n")
            dummies[j] = cand[rng.integers(cand.size)]
            counts[dummies[j]] += 1
    else:
        dummies = rng.integers(T, size=d)
    allv = np.concatenate([inputs, dummies])
    origin = np.concatenate([np.arange(n, dtype=np.int64), np.full(d, -1, dtype=np.int64)])
    perm = rng.permutation(n + d)
    return allv[perm], origin[perm]


def scramble(inputs: Sequence[int], cfg: MechanismConfig, rng, return_mask: bool = False):
    """Scrambler: add ``cfg.d`` dummies and shuffle.

    Args:
        inputs: target indices of the n collected messages.
        cfg: mechanism parameters; ``cfg.n`` (if set) must equal ``len(inputs)``.
        rng: Generator, RngSeed or int seed.
        return_mask: also return a boolean mask marking forwarded inputs.

    Returns:
        Shuffled int array of length n+d, plus the mask when requested.
    """
    inputs = np.asarray(inputs, dtype=np.int64).reshape(-1)
    n = len(inputs)
    if cfg.n is not None and n != cfg.n:
        raise ValueError(f"scrambler expects n={cfg.n} inputs, got {n}")
    if np.any((inputs < 0) | (inputs >= cfg.T)):
        raise ValueError("input target index outside the universe")
    cap = cfg.n if cfg.n is not None else n
    if cfg.capped and cfg.d > cap * cfg.T - cap:
        raise ValueError("capped scrambler needs d <= n*T - n")
    out, origin = _scramble_index(inputs, cfg.T, cap, cfg.d, cfg.capped, as_generator(rng))
    return (out, origin >= 0) if return_mask else out


@dataclass(frozen=True)
class Observation:
    """Adversary-visible batches plus internal dummy bookkeeping.

    ``batches[k]`` lists the target indices sent by ``senders[k]`` (a scrambler
    in scrambler mode, a source in local mode).
    """

    senders: tuple[str, ...]
    batches: tuple[np.ndarray, ...]
    real: tuple[np.ndarray, ...]
    T: int

    def canonical(self) -> tuple[tuple[int, ...], ...]:
        """Per-batch per-target count vectors."""
        return tuple(tuple(int(c) for c in np.bincount(b, minlength=self.T)) for b in self.batches)


def run_cluster_mechanism(g: CommunicationGraph, cfg: MechanismConfig, seed: RngSeed | int = 0) -> Observation:
    """Run the cluster mechanism on a communication graph.

    Sources are grouped in message order, n per scrambler. Every source and
    every scrambler draws from its own stream, keyed by its id, so the result
    does not depend on the order in which groups are processed.
    """
    if cfg.T != g.T:
        raise ValueError(f"config has T={cfg.T} but the graph has {g.T} targets")
    seed = seed if isinstance(seed, RngSeed) else RngSeed(int(seed))
    idx = g.target_indices()
    sources = [s for s, _ in g.messages]
    if cfg.local:
        batches, reals = [], []
        for s, t in zip(sources, idx):
            out, real = _randomize_index(int(t), cfg.T, cfg.sigma, cfg.d, seed.generator("source", s))
            batches.append(out)
            mask = np.zeros(cfg.d + 1, bool)
            mask[0] = real
            reals.append(mask)
        return Observation(tuple(sources), tuple(batches), tuple(reals), cfg.T)
    n = cfg.n
    if g.S % n:
        raise ValueError(f"S={g.S} is not divisible by the group size n={n}")
    senders, batches, reals = [], [], []
    for k in range(g.S // n):
        sampled = np.empty(n, dtype=np.int64)
        real_in = np.empty(n, dtype=bool)
        for i in range(n):
            pos = k * n + i
            out, real = _randomize_index(int(idx[pos]), cfg.T, cfg.sigma, 0, seed.generator("source", sources[pos]))
            sampled[i] = out[0]
            real_in[i] = real
        out, origin = _scramble_index(sampled, cfg.T, n, cfg.d, cfg.capped, seed.generator("scrambler", k))
        real = np.zeros(n + cfg.d, bool)
        real[origin >= 0] = real_in[origin[origin >= 0]]
        senders.append(f"scrambler{k}")
        batches.append(out)
        reals.append(real)
    return Observation(tuple(senders), tuple(batches), tuple(reals), cfg.T)


def sample_batch_counts(true_idx: Sequence[int], cfg: MechanismConfig, runs: int, rng,
                        chunk: int = 100_000, backend: str | None = None) -> np.ndarray:
    """Count vectors of one scrambler batch for ``runs`` independent executions.

    Only the per-target counts are produced; the shuffle does not change them.
    """
    true_idx = np.asarray(true_idx, dtype=np.int64)
    if cfg.local:
        raise ValueError("batch sampling needs a scrambler group size n")
    n = len(true_idx)
    if n != cfg.n:
        raise ValueError(f"expected n={cfg.n} sources, got {n}")
    gen = as_generator(rng)
    out = np.empty((runs, cfg.T), dtype=np.int64)
    for lo in range(0, runs, chunk):
        m = min(chunk, runs - lo)
        u_coin = gen.random((m, n))
        u_pick = gen.random((m, n))
        u_dummy = gen.random((m, cfg.d))
        counts, stuck = kernels.cluster_counts(true_idx, cfg.T, n, cfg.sigma, cfg.capped,
                                               u_coin, u_pick, u_dummy, backend=backend)
        if stuck:
            raise ValueError("capped scrambler ran out of targets; need d <= n*T - n")
        out[lo:lo + m] = counts
    return out
