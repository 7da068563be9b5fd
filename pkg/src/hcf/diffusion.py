"""Independent-cascade simulation on a probability matrix, spread estimation
(Monte Carlo and exact), and CELF selection of critical lines.

Edge trials come from a counter-based stream: run ``r`` under seed ``s``
sees the same live/dead edge outcomes no matter how runs are batched or
scheduled.  Every spread estimate with the same ``(rng_seed, n_runs)``
therefore uses common random numbers.
"""
import heapq
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dcsim import CascadeTrace

MAX_EXACT_NODES = 20
_RUN_CHUNK = 4096


@dataclass(frozen=True)
class DiffusionRun:
    seed_lines: frozenset
    generations: tuple
    rng_seed: int

    @property
    def active(self):
        return frozenset().union(*self.generations)


def _seed_index(pmat, seeds):
    seeds = list(dict.fromkeys(seeds))
    if not seeds:
        raise ValueError("seeds must be non-empty")
    pos = {lid: i for i, lid in enumerate(pmat.line_ids)}
    try:
        return np.array(sorted(pos[s] for s in seeds), dtype=np.intp)
    except KeyError as exc:
        raise ValueError(f"unknown node id {exc.args[0]}") from None


def _generations(ids, times_row):
    gens = []
    for t in range(int(times_row.max()) + 1):
        gens.append(frozenset(ids[i] for i in np.flatnonzero(times_row == t)))
    return tuple(gens)


def simulate_ic(pmat, seeds, rng_seed=0, run_index=0):
    """One IC diffusion from ``seeds``; generation t holds nodes first active at step t."""
    idx = _seed_index(pmat, seeds)
    times = kernels.ic_times(pmat.p, np.array([0, idx.size]), idx, rng_seed, np.array([run_index]))[0]
    return DiffusionRun(frozenset(pmat.line_ids[i] for i in idx),
                        _generations(pmat.line_ids, times), rng_seed)


def simulate_cascades(pmat, seed_sets, rng_seed=0):
    """IC cascade traces, run ``k`` starting from ``seed_sets[k]`` with stream ``k``."""
    seed_sets = [_seed_index(pmat, s) for s in seed_sets]
    ids = pmat.line_ids

    def chunk(lo):
        part = seed_sets[lo:lo + _RUN_CHUNK]
        indptr = np.r_[0, np.cumsum([s.size for s in part])]
        idx = np.concatenate(part) if part else np.zeros(0, dtype=np.intp)
        runs = np.arange(lo, lo + len(part), dtype=np.uint64)
        times = kernels.ic_times(pmat.p, indptr, idx, rng_seed, runs)
        return [CascadeTrace(lo + k, _generations(ids, row)) for k, row in enumerate(times)]

    out = []
    for part in kernels.pmap(chunk, range(0, len(seed_sets), _RUN_CHUNK)):
        out.extend(part)
    return out


def _mc_sizes(pmat, idx, n_runs, rng_seed):
    starts = list(range(0, n_runs, _RUN_CHUNK))
    parts = kernels.pmap(
        lambda lo: kernels.ic_sizes(pmat.p, idx, rng_seed, lo, min(_RUN_CHUNK, n_runs - lo)),
        starts)
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def estimate_spread(pmat, seeds, n_runs=10000, rng_seed=0):
    """Monte Carlo mean of the final active-set size and its standard error."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    sizes = _mc_sizes(pmat, _seed_index(pmat, seeds), n_runs, rng_seed)
    mean = float(sizes.mean())
    se = float(sizes.std(ddof=1) / np.sqrt(n_runs)) if n_runs > 1 else 0.0
    return mean, se


def exact_spread(pmat, seeds):
    """Exact expected spread by dynamic programming over final active sets.

    For seed set S0 and candidate final set S0 | A, R(A) is the probability
    that live edges inside S0 | A reach all of A from S0::

        R(A) = 1 - sum_{B < A} R(B) * Q(S0 | B, A \\ B)

    where Q(T, U) is the probability that no edge from T into U is live.
    The final set equals S0 | A with probability R(A) * Q(S0 | A, rest).
    Cost is O(3^k * k) for the k non-seed nodes reachable from the seeds.
    """
    n = pmat.n
    if n > MAX_EXACT_NODES:
        raise ValueError(f"instance too large for exact spread ({n} > {MAX_EXACT_NODES} nodes)")
    seed_idx = _seed_index(pmat, seeds)
    p = pmat.p
    # nodes never reachable through p > 0 edges are never active
    reach = np.zeros(n, dtype=bool)
    reach[seed_idx] = True
    frontier = list(seed_idx)
    while frontier:
        nxt = np.flatnonzero((p[frontier] > 0).any(axis=0) & ~reach)
        reach[nxt] = True
        frontier = list(nxt)
    free = np.flatnonzero(reach)
    free = free[~np.isin(free, seed_idx)]
    k = free.size
    n0 = seed_idx.size
    if k == 0:
        return float(n0)

    notp = 1.0 - p[:, free]                     # (n, k)
    # q[B][j]: probability that no node of S0 | B activates free[j]
    q = np.empty((1 << k, k))
    q[0] = np.prod(notp[seed_idx], axis=0)
    for B in range(1, 1 << k):
        low = (B & -B).bit_length() - 1
        q[B] = q[B & (B - 1)] * notp[free[low]]

    bits = np.array([[(m >> j) & 1 for j in range(k)] for m in range(1 << k)], dtype=bool)
    R = np.zeros(1 << k)
    R[0] = 1.0
    total = 0.0
    for A in range(1 << k):
        if A:
            subs = _proper_submasks(A)
            outside = bits[A] & ~bits[subs]          # A \ B per row
            fac = np.where(outside, q[subs], 1.0).prod(axis=1)
            R[A] = 1.0 - float(R[subs] @ fac)
        rest = ~bits[A]
        p_final = R[A] * float(np.prod(q[A][rest]))
        total += p_final * (n0 + int(bits[A].sum()))
    return total


def _proper_submasks(A):
    subs = []
    B = (A - 1) & A
    while True:
        subs.append(B)
        if B == 0:
            break
        B = (B - 1) & A
    return np.array(subs, dtype=np.intp)


def mc_evaluator(pmat, n_runs=10000, rng_seed=0):
    """Spread function on seed index arrays using common random numbers."""
    def spread(idx):
        return float(_mc_sizes(pmat, np.asarray(sorted(idx), dtype=np.intp), n_runs, rng_seed).mean())
    return spread


def exact_evaluator(pmat):
    def spread(idx):
        return exact_spread(pmat, [pmat.line_ids[i] for i in idx])
    return spread


def celf_top_k(pmat, k, n_runs=10000, rng_seed=0, evaluator=None):
    """Lazy-greedy spread maximization.

    Returns ``[(line_id, marginal_spread), ...]`` in selection order.  Ties
    go to the lower matrix index (the lower line id for sorted ids).
    """
    n = pmat.n
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k exceeds line count ({k} > {n})")
    spread = evaluator or mc_evaluator(pmat, n_runs, rng_seed)
    chosen = []
    base = 0.0
    heap = [(-spread([i]), i, 0) for i in range(n)]
    heapq.heapify(heap)
    out = []
    while len(chosen) < k:
        neg, i, stamp = heapq.heappop(heap)
        if stamp == len(chosen):
            chosen.append(i)
            base += -neg
            out.append((pmat.line_ids[i], -neg))
            continue
        gain = spread(chosen + [i]) - base
        heapq.heappush(heap, (-gain, i, len(chosen)))
    return out


def greedy_top_k(pmat, k, evaluator):
    """Plain greedy (every candidate re-evaluated each round); test oracle for CELF."""
    n = pmat.n
    if not 1 <= k <= n:
        raise ValueError("k must be in [1, n]")
    chosen = []
    base = 0.0
    out = []
    for _ in range(k):
        best = None
        for i in range(n):
            if i in chosen:
                continue
            gain = evaluator(chosen + [i]) - base
            if best is None or gain > best[0]:
                best = (gain, i)
        chosen.append(best[1])
        base += best[0]
        out.append((pmat.line_ids[best[1]], best[0]))
    return out

