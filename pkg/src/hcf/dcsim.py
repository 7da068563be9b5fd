"""DC power flow and a generation-structured cascading-failure simulator."""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .kernels import pmap

# islands up to this many buses use a dense solve
_DENSE_MAX = 200
# |flow| must exceed alpha * capacity by this relative margin to trip
OVERLOAD_RTOL = 1e-9


@dataclass(frozen=True)
class FlowState:
    bus_ids: tuple
    line_ids: tuple
    bus_angles: np.ndarray     # radians, per bus
    line_flows: np.ndarray     # from -> to, 0 for out-of-service lines
    injections: np.ndarray     # net injection per bus after island rebalancing
    islands: tuple             # frozensets of bus ids
    shed_demand: float         # demand not served after rebalancing
    in_service: np.ndarray     # bool per line

    def flow(self, line_id):
        return float(self.line_flows[self.line_ids.index(line_id)])


@dataclass(frozen=True)
class CascadeTrace:
    cascade_id: int
    generations: tuple  # of frozensets of line ids

    def __post_init__(self):
        gens = tuple(frozenset(g) for g in self.generations)
        object.__setattr__(self, "generations", gens)
        if not gens or not gens[0]:
            raise ValueError(f"cascade {self.cascade_id}: generation 0 must be non-empty")
        seen = set()
        for t, g in enumerate(gens):
            if not g:
                raise ValueError(f"cascade {self.cascade_id}: empty generation {t}")
            if seen & g:
                raise ValueError(f"cascade {self.cascade_id}: generations overlap")
            seen |= g

    @property
    def failed(self):
        return frozenset().union(*self.generations)

    @property
    def size(self):
        return sum(len(g) for g in self.generations)

    def to_json(self):
        return {"id": self.cascade_id, "generations": [sorted(g) for g in self.generations]}


def _grid_arrays(grid):
    bus_pos = {b.bus_id: i for i, b in enumerate(grid.buses)}
    f = np.array([bus_pos[l.from_bus] for l in grid.lines], dtype=np.intp)
    t = np.array([bus_pos[l.to_bus] for l in grid.lines], dtype=np.intp)
    b = np.array([l.susceptance for l in grid.lines], dtype=float)
    gen = np.array([x.generation for x in grid.buses], dtype=float)
    dem = np.array([x.demand for x in grid.buses], dtype=float)
    return f, t, b, gen, dem


def solve_dc_flow(grid, outages=()):
    """DC flow with ``outages`` removed, solved island by island.

    Each island is balanced by scaling its surplus side proportionally
    (generation curtailed or demand shed), then ``B theta = P`` is solved
    with the lowest bus id of the island as angle reference.
    """
    outages = set(outages)
    unknown = outages - set(grid.line_ids)
    if unknown:
        raise ValueError(f"unknown outage line ids {sorted(unknown)}")
    f, t, b, gen, dem = _grid_arrays(grid)
    nb = len(grid.buses)
    live = np.array([l.in_service and l.line_id not in outages for l in grid.lines], dtype=bool)
    fl, tl, bl = f[live], t[live], b[live]

    adj = sp.coo_matrix((np.ones(fl.size), (fl, tl)), shape=(nb, nb))
    n_isl, label = connected_components(adj, directed=False)

    theta = np.zeros(nb)
    inj = np.zeros(nb)
    islands = []
    shed = 0.0
    for k in range(n_isl):
        buses = np.flatnonzero(label == k)  # ascending, so buses[0] has the lowest id
        islands.append(frozenset(grid.buses[i].bus_id for i in buses))
        g, d = gen[buses].copy(), dem[buses].copy()
        G, D = g.sum(), d.sum()
        if G > D:
            g *= D / G
        elif D > G:
            shed += D - G
            d *= G / D
        P = g - d
        inj[buses] = P
        if buses.size == 1:
            continue
        local = np.full(nb, -1, dtype=np.intp)
        local[buses] = np.arange(buses.size)
        sel = label[fl] == k
        lf, lt, lb = local[fl[sel]], local[tl[sel]], bl[sel]
        m = buses.size
        L = sp.coo_matrix(
            (np.r_[lb, lb, -lb, -lb], (np.r_[lf, lt, lf, lt], np.r_[lf, lt, lt, lf])),
            shape=(m, m)).tocsc()
        Lr = L[1:, 1:]
        if m <= _DENSE_MAX:
            sol = np.linalg.solve(Lr.toarray(), P[1:])
        else:
            sol = splu(Lr).solve(P[1:])
        theta[buses[1:]] = sol

    flows = np.zeros(len(grid.lines))
    flows[live] = bl * (theta[fl] - theta[tl])
    return FlowState(
        bus_ids=tuple(grid.bus_ids),
        line_ids=tuple(grid.line_ids),
        bus_angles=theta,
        line_flows=flows,
        injections=inj,
        islands=tuple(sorted(islands, key=min)),
        shed_demand=shed,
        in_service=live,
    )


def conservation_residual(grid, state):
    """Max over buses of |injection - outflow + inflow|."""
    f, t, *_ = _grid_arrays(grid)
    net = state.injections.copy()
    np.subtract.at(net, f, state.line_flows)
    np.add.at(net, t, state.line_flows)
    return float(np.max(np.abs(net))) if net.size else 0.0


def run_cascade(grid, initial_outages, alpha=1.0, cascade_id=0):
    """Trip overloaded lines generation by generation until none is overloaded."""
    initial = frozenset(initial_outages)
    if not initial:
        raise ValueError("initial_outages must be non-empty")
    if alpha < 1.0:
        raise ValueError("alpha must be >= 1")
    in_service = {l.line_id for l in grid.lines if l.in_service}
    bad = initial - in_service
    if bad:
        raise ValueError(f"initial outages not in service: {sorted(bad)}")
    cap = np.array([l.capacity for l in grid.lines]) * alpha
    limit = cap * (1.0 + OVERLOAD_RTOL)
    ids = np.array(grid.line_ids)

    generations = [initial]
    out = set(initial)
    while True:
        state = solve_dc_flow(grid, out)
        over = state.in_service & (np.abs(state.line_flows) > limit)
        if not over.any():
            break
        nxt = frozenset(int(i) for i in ids[over])
        generations.append(nxt)
        out |= nxt
    return CascadeTrace(cascade_id, tuple(generations))


def sample_initial_outages(rng, line_ids, line_fail_prob):
    """Independent Bernoulli failures per line, redrawn until non-empty."""
    line_ids = np.asarray(line_ids)
    while True:
        hit = rng.random(line_ids.size) < line_fail_prob
        if hit.any():
            return frozenset(int(i) for i in line_ids[hit])


def run_stream(rng_seed, run_index):
    """Independent generator for one run, derived from (seed, run index)."""
    return np.random.default_rng([int(rng_seed) & ((1 << 63) - 1), int(run_index)])


def generate_dataset(grid, n_runs, line_fail_prob=1 / 516, rng_seed=0, alpha=1.0):
    """``n_runs`` cascades from random initial contingencies; deterministic in ``rng_seed``."""
    if not 0 < line_fail_prob < 1:
        raise ValueError("line_fail_prob must be in (0, 1)")
    if n_runs < 0:
        raise ValueError("n_runs must be >= 0")
    ids = grid.in_service_line_ids
    if n_runs and not ids:
        raise ValueError("grid has no in-service lines")

    def one(k):
        init = sample_initial_outages(run_stream(rng_seed, k), ids, line_fail_prob)
        return run_cascade(grid, init, alpha=alpha, cascade_id=k)

    return pmap(one, range(n_runs))


def write_traces(traces, path):
    with Path(path).open("w", encoding="utf-8") as fh:
        for tr in traces:
            fh.write(json.dumps(tr.to_json(), separators=(",", ":")) + "\n")


def read_traces(path):
    traces = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
                traces.append(CascadeTrace(int(obj["id"]), tuple(obj["generations"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad trace record ({exc})") from None
    return traces
