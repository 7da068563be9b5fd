"""Distribution Error, Probability Error and cascade-size histograms."""
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_TOP_FRACTION = 0.05


@dataclass(frozen=True)
class FailureDistribution:
    counts: dict          # line id -> failure count over all cascades
    n_cascades: int
    universe: frozenset

    def expected(self, line_id):
        """Failures per cascade."""
        return self.counts.get(line_id, 0) / self.n_cascades if self.n_cascades else 0.0


def failure_distribution(traces, exclude_initial=True, universe=None):
    """Per-line failure counts; generation 0 is skipped when ``exclude_initial``."""
    traces = list(traces)
    if not traces:
        raise ValueError("no traces")
    counts = {}
    seen = set()
    for tr in traces:
        for t, g in enumerate(tr.generations):
            seen |= g
            if exclude_initial and t == 0:
                continue
            for lid in g:
                counts[lid] = counts.get(lid, 0) + 1
    uni = frozenset(universe) if universe is not None else frozenset(seen)
    extra = seen - uni
    if extra:
        raise ValueError(f"traces contain lines outside the universe: {sorted(extra)}")
    return FailureDistribution({lid: counts.get(lid, 0) for lid in sorted(uni)}, len(traces), uni)


def top_lines(dist, fraction):
    """The ceil(fraction * n) lines with the largest counts (ties: lower id)."""
    ids = sorted(dist.universe)
    k = max(1, math.ceil(fraction * len(ids) - 1e-12))
    ranked = sorted(ids, key=lambda lid: (-dist.counts.get(lid, 0), lid))
    return ranked[:k]


def distribution_error(model_dist, data_dist, mode="relative", top_fraction=DEFAULT_TOP_FRACTION):
    """Mean absolute or relative gap between per-cascade expected failure counts.

    Relative errors divide by the data-side expectation floored at one
    failure in the data set (1 / n_cascades).  With ``top_fraction`` only
    the most-failing data-side lines are compared.
    """
    if model_dist.universe != data_dist.universe:
        raise ValueError("distributions cover different line sets")
    if mode not in ("absolute", "relative"):
        raise ValueError(f"unknown mode {mode!r}")
    lines = sorted(data_dist.universe) if top_fraction is None else top_lines(data_dist, top_fraction)
    if not lines:
        return 0.0
    cm = np.array([model_dist.expected(l) for l in lines])
    cd = np.array([data_dist.expected(l) for l in lines])
    gap = np.abs(cm - cd)
    if mode == "relative":
        gap = gap / np.maximum(cd, 1.0 / max(data_dist.n_cascades, 1))
    return float(gap.mean())


def probability_error(pmat_a, pmat_b, mode="absolute", lam=1e-9):
    """Mean entrywise gap over ordered pairs; relative mode divides by max(b, lam)."""
    if tuple(pmat_a.line_ids) != tuple(pmat_b.line_ids):
        raise ValueError("probability matrices cover different line sets")
    if mode not in ("absolute", "relative"):
        raise ValueError(f"unknown mode {mode!r}")
    n = pmat_a.n
    if n < 2:
        return 0.0
    off = ~np.eye(n, dtype=bool)
    a, b = pmat_a.p[off], pmat_b.p[off]
    gap = np.abs(a - b)
    if mode == "relative":
        gap = gap / np.maximum(b, lam)
    return float(gap.mean())


def cascade_sizes(traces):
    return np.array([tr.size for tr in traces], dtype=np.int64)


def size_histogram(traces, bin_edges):
    """``[(lo, hi, mass), ...]`` of cascade sizes.

    Bins are half-open except the last, which is closed; sizes outside the
    edges are counted in the nearest end bin so the masses sum to one.
    """
    edges = np.asarray(bin_edges, dtype=float)
    if edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin_edges must be strictly increasing with at least two entries")
    sizes = cascade_sizes(traces).astype(float)
    if sizes.size == 0:
        return [(float(lo), float(hi), 0.0) for lo, hi in zip(edges[:-1], edges[1:])]
    sizes = np.clip(sizes, edges[0], edges[-1])
    counts, _ = np.histogram(sizes, bins=edges)
    mass = counts / sizes.size
    return [(float(lo), float(hi), float(m)) for lo, hi, m in zip(edges[:-1], edges[1:], mass)]
