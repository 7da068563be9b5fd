"""Positive/negative diffusion samples aggregated by (activators, target, label)."""
import csv
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Sample:
    activators: frozenset
    target: int
    label: int
    multiplicity: int = 1

    def __post_init__(self):
        if not self.activators:
            raise ValueError("activators must be non-empty")
        if self.target in self.activators:
            raise ValueError(f"target {self.target} is one of its own activators")
        if self.multiplicity < 1:
            raise ValueError("multiplicity must be >= 1")


class SampleSet:
    """Multiset of samples; ``counts[(activators, target, label)] = multiplicity``."""

    def __init__(self, counts=None):
        self.counts = Counter()
        for key, mult in (counts or {}).items():
            Sample(key[0], key[1], key[2], mult)  # validates
            self.counts[(frozenset(key[0]), key[1], int(key[2]))] += mult

    @classmethod
    def from_samples(cls, samples):
        out = cls()
        for s in samples:
            out.counts[(s.activators, s.target, s.label)] += s.multiplicity
        return out

    def __iter__(self):
        for (acts, tgt, lab), mult in sorted(self.counts.items(), key=_sort_key):
            yield Sample(acts, tgt, lab, mult)

    def __len__(self):
        return len(self.counts)

    def __eq__(self, other):
        return isinstance(other, SampleSet) and self.counts == other.counts

    def merge(self, other):
        out = SampleSet()
        out.counts = self.counts + other.counts
        return out

    @property
    def m(self):
        return sum(self.counts.values())

    @property
    def V(self):
        return max((len(a) for a, _, _ in self.counts), default=0)

    @property
    def positives(self):
        return {(a, t): c for (a, t, y), c in self.counts.items() if y == 1}

    @property
    def negatives(self):
        return {(a, t): c for (a, t, y), c in self.counts.items() if y == 0}

    def grouped(self):
        """{(activators, target): [n_pos, n_neg]} in a stable order."""
        out = {}
        for (a, t, y), c in sorted(self.counts.items(), key=_sort_key):
            out.setdefault((a, t), [0, 0])[0 if y == 1 else 1] += c
        return out

    def lines(self):
        ids = set()
        for a, t, _ in self.counts:
            ids |= a
            ids.add(t)
        return ids

    def to_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["activators", "target", "label", "multiplicity"])
            for s in self:
                w.writerow([";".join(map(str, sorted(s.activators))), s.target, s.label, s.multiplicity])


def _sort_key(item):
    (a, t, y), _ = item
    return (len(a), sorted(a), t, -y)


def encode_cascades(traces, universe):
    """Samples of every cascade step: positives for the next generation,
    negatives for lines that have not failed by the next generation."""
    universe = frozenset(universe)
    steps = Counter()
    for tr in traces:
        gens = tr.generations
        for g in gens:
            bad = g - universe
            if bad:
                raise ValueError(f"cascade {tr.cascade_id}: unknown line ids {sorted(bad)}")
        failed = set()
        for t, g in enumerate(gens):
            failed |= g
            nxt = gens[t + 1] if t + 1 < len(gens) else frozenset()
            steps[(g, frozenset(failed | nxt), nxt)] += 1

    out = SampleSet()
    c = out.counts
    for (acts, done, nxt), k in steps.items():
        for v in nxt:
            c[(acts, v, 1)] += k
        for v in universe - done:
            c[(acts, v, 0)] += k
    return out


@dataclass(frozen=True)
class CompiledSamples:
    """Flat arrays of a SampleSet over a fixed line ordering (pair index = u*n + v)."""
    n: int
    indptr: np.ndarray
    pair_idx: np.ndarray
    npos: np.ndarray
    nneg: np.ndarray
    m: int
    V: int


def compile_samples(samples, line_ids):
    pos = {lid: i for i, lid in enumerate(line_ids)}
    n = len(line_ids)
    groups = samples.grouped()
    indptr = [0]
    idx = []
    npos = []
    nneg = []
    try:
        for (acts, tgt), (a, b) in groups.items():
            v = pos[tgt]
            idx.extend(sorted(pos[u] * n + v for u in acts))
            indptr.append(len(idx))
            npos.append(a)
            nneg.append(b)
    except KeyError as exc:
        raise ValueError(f"sample references line {exc.args[0]} missing from features") from None
    return CompiledSamples(
        n=n,
        indptr=np.array(indptr, dtype=np.intp),
        pair_idx=np.array(idx, dtype=np.intp),
        npos=np.array(npos, dtype=float),
        nneg=np.array(nneg, dtype=float),
        m=samples.m,
        V=samples.V,
    )


def covering_probability(n_lines, n_samples):
    """Probability that ``n_samples`` uniform draws cover all ``n_lines`` lines.

    Returns ``(p_cover, lower_bound)`` with ``lower_bound = 1 - n e^{-m/n}``.
    """
    if n_lines < 1 or n_samples < 0:
        raise ValueError("need n_lines >= 1 and n_samples >= 0")
    n, m = int(n_lines), int(n_samples)
    if m == 0:
        miss_one = 1.0
    elif n == 1:
        miss_one = 0.0
    else:
        miss_one = math.exp(m * math.log1p(-1.0 / n))
    p = 0.0 if miss_one == 1.0 else math.exp(n * math.log1p(-miss_one))
    return p, 1.0 - n * math.exp(-m / n)
