"""Monte Carlo kernels.

Both backends map the same pre-drawn uniforms to outcomes, so for equal
inputs they return equal results. ``BACKEND`` picks the default; pass
``backend="numpy"`` or ``"numba"`` to force one.
"""

from __future__ import annotations

import numpy as np

from ._jit import BACKEND, HAS_NUMBA, njit

__all__ = ["BACKEND", "HAS_NUMBA", "cluster_counts", "tail_positive_sums"]


def _pick(u, m):
    """Index in [0, m) from a uniform in [0, 1)."""
    return np.minimum((u * m).astype(np.int64), m - 1)


def _cluster_counts_np(true_idx, T, cap, sigma, capped, u_coin, u_pick, u_dummy):
    runs, n = u_coin.shape
    d = u_dummy.shape[1]
    tgt = np.where(u_coin < sigma, _pick(u_pick, T), true_idx[None, :])
    flat = (np.arange(runs, dtype=np.int64)[:, None] * T + tgt).ravel()
    counts = np.bincount(flat, minlength=runs * T).reshape(runs, T)
    stuck = False
    if d == 0:
        return counts, stuck
    if not capped:
        dflat = (np.arange(runs, dtype=np.int64)[:, None] * T + _pick(u_dummy, T)).ravel()
        counts += np.bincount(dflat, minlength=runs * T).reshape(runs, T)
        return counts, stuck
    rows = np.arange(runs)
    for j in range(d):
        cand = counts < cap
        nc = cand.sum(axis=1)
        if np.any(nc == 0):
            stuck = True
            nc = np.maximum(nc, 1)
        idx = _pick(u_dummy[:, j], nc)
        cum = np.cumsum(cand, axis=1)
        counts[rows, np.argmax(cum > idx[:, None], axis=1)] += 1
    return counts, stuck


@njit(cache=True)
def _cluster_counts_nb(true_idx, T, cap, sigma, capped, u_coin, u_pick, u_dummy):
    runs, n = u_coin.shape
    d = u_dummy.shape[1]
    counts = np.zeros((runs, T), dtype=np.int64)
    stuck = False
    for r in range(runs):
        for i in range(n):
            if u_coin[r, i] < sigma:
                t = min(int(u_pick[r, i] * T), T - 1)
            else:
                t = true_idx[i]
            counts[r, t] += 1
        for j in range(d):
            if not capped:
                counts[r, min(int(u_dummy[r, j] * T), T - 1)] += 1
                continue
            nc = 0
            for t in range(T):
                if counts[r, t] < cap:
                    nc += 1
            if nc == 0:
                stuck = True
                nc = 1
            idx = min(int(u_dummy[r, j] * nc), nc - 1)
            seen = 0
            for t in range(T):
                if counts[r, t] < cap:
                    if seen == idx:
                        counts[r, t] += 1
                        break
                    seen += 1
            else:
                counts[r, 0] += 1
    return counts, stuck


def cluster_counts(true_idx, T: int, cap: int, sigma: float, capped: bool,
                   u_coin, u_pick, u_dummy, backend: str | None = None):
    """Per-target counts of one scrambler batch for many independent runs.

    Args:
        true_idx: (n,) true target index of each source.
        T: number of targets.
        cap: per-target cap used when ``capped`` (the group size n).
        sigma: sampling probability.
        capped: drop targets at the cap from the dummy candidate set.
        u_coin, u_pick: (runs, n) uniforms for the sampling coin and the uniform target.
        u_dummy: (runs, d) uniforms for the dummy draws.
        backend: "numba", "numpy" or None for the module default.

    Returns:
        (counts, stuck): int64 array (runs, T) and whether any capped run ran
        out of candidates.
    """
    backend = backend or BACKEND
    args = (np.ascontiguousarray(true_idx, dtype=np.int64), int(T), int(cap), float(sigma), bool(capped),
            np.ascontiguousarray(u_coin, dtype=np.float64), np.ascontiguousarray(u_pick, dtype=np.float64),
            np.ascontiguousarray(u_dummy, dtype=np.float64))
    if backend == "numba":
        return _cluster_counts_nb(*args)
    if backend == "numpy":
        return _cluster_counts_np(*args)
    raise ValueError(f"unknown backend {backend!r}")


def _tail_positive_sums_np(cats, values):
    cs = np.cumsum(values[cats], axis=1)
    return np.maximum(cs, 0.0).sum(axis=0)


@njit(cache=True)
def _tail_positive_sums_nb(cats, values):
    R, K = cats.shape
    acc = np.zeros(K)
    for r in range(R):
        s = 0.0
        for k in range(K):
            s += values[cats[r, k]]
            if s > 0.0:
                acc[k] += s
    return acc


def tail_positive_sums(cats, values, backend: str | None = None, chunk: int = 1024) -> np.ndarray:
    """Sum over replicates of the positive part of every prefix sum.

    Args:
        cats: (R, K) small-integer category of each draw.
        values: value of each category.
        backend: "numba", "numpy" or None for the module default.
        chunk: replicates per numpy block (bounds memory).

    Returns:
        (K,) array whose entry k-1 is sum_r max(sum_{i<=k} values[cats[r, i]], 0).
    """
    backend = backend or BACKEND
    cats = np.ascontiguousarray(cats)
    values = np.ascontiguousarray(values, dtype=np.float64)
    if backend == "numba":
        return _tail_positive_sums_nb(cats, values)
    if backend != "numpy":
        raise ValueError(f"unknown backend {backend!r}")
    acc = np.zeros(cats.shape[1])
    for lo in range(0, cats.shape[0], chunk):
        acc += _tail_positive_sums_np(cats[lo:lo + chunk], values)
    return acc
