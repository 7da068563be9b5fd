"""Small reproducible test grids."""
import numpy as np

from .dcsim import solve_dc_flow
from .grid_io import Bus, GridCase, Line


def synthetic_grid(n_buses=20, n_lines=30, n_gens=4, seed=7, margin=(1.5, 3.0)):
    """Ring-plus-chords grid with capacities a random margin above base flow.

    Deterministic in ``seed``.  The base state is balanced and no line is
    overloaded, so cascades only start from outages.
    """
    if n_lines < n_buses:
        raise ValueError("need at least as many lines as buses (ring backbone)")
    rng = np.random.default_rng(seed)
    pairs = [(i, i % n_buses + 1) for i in range(1, n_buses + 1)]
    have = {frozenset(p) for p in pairs}
    while len(pairs) < n_lines:
        a, b = (int(v) for v in rng.choice(np.arange(1, n_buses + 1), 2, replace=False))
        if frozenset((a, b)) not in have:
            have.add(frozenset((a, b)))
            pairs.append((a, b))

    gens = set(int(v) for v in rng.choice(np.arange(1, n_buses + 1), n_gens, replace=False))
    demand = {b: (0.0 if b in gens else float(rng.uniform(0.5, 1.5))) for b in range(1, n_buses + 1)}
    total = sum(demand.values())
    share = rng.uniform(0.5, 1.5, n_gens)
    share /= share.sum()
    # rounding must not break the balance, so the last unit takes the remainder
    out = [round(float(total * s), 6) for s in share[:-1]]
    out.append(float(total - sum(out)))
    gen = dict(zip(sorted(gens), out))
    buses = tuple(Bus(b, demand[b], gen.get(b, 0.0)) for b in range(1, n_buses + 1))

    suscept = rng.uniform(5.0, 20.0, n_lines)
    lines = tuple(Line(k + 1, a, b, float(suscept[k]), 1.0) for k, (a, b) in enumerate(pairs))
    grid = GridCase(buses, lines)
    flows = np.abs(solve_dc_flow(grid).line_flows)
    floor = 0.25 * float(flows.mean())
    caps = np.maximum(flows * rng.uniform(*margin, n_lines), floor)
    lines = tuple(Line(l.line_id, l.from_bus, l.to_bus, l.susceptance, float(round(c, 6)))
                  for l, c in zip(lines, caps))
    return GridCase(buses, lines)
