"""Per-line physical/topological features and normalized pair vectors x_uv."""
import csv
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

LINE_FEATURES = (
    "susceptance",
    "capacity",
    "abs_flow",
    "loading",
    "endpoint_demand",
    "endpoint_generation",
    "endpoint_degree",
    "betweenness",
    "island_share",
    "spare_capacity",
    "endpoint_neighbor_degree",
)
PAIR_FEATURES = ("shared_bus", "line_distance", "loading_gap")


@dataclass(frozen=True)
class LineFeatureTable:
    line_ids: tuple
    names: tuple
    values: np.ndarray          # (n_lines, len(names)), raw units
    endpoints: tuple            # (from_bus, to_bus) per line
    line_distance: np.ndarray   # hop distance between lines on the bus graph

    def column(self, name):
        return self.values[:, self.names.index(name)]

    def row(self, line_id):
        return dict(zip(self.names, self.values[self.line_ids.index(line_id)]))


@dataclass(frozen=True)
class FeatureSpec:
    line_features: tuple = LINE_FEATURES
    pair_features: tuple = PAIR_FEATURES
    normalization: dict = field(default_factory=dict)  # name -> (min, max)

    @property
    def names(self):
        return (tuple(f"{n}_u" for n in self.line_features)
                + tuple(f"{n}_v" for n in self.line_features)
                + tuple(self.pair_features))

    @property
    def d(self):
        return 2 * len(self.line_features) + len(self.pair_features)

    @property
    def fitted(self):
        return all(n in self.normalization for n in self.line_features + self.pair_features)

    def to_json(self):
        return {
            "line_features": list(self.line_features),
            "pair_features": list(self.pair_features),
            "names": list(self.names),
            "normalization": {k: list(v) for k, v in self.normalization.items()},
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            line_features=tuple(obj["line_features"]),
            pair_features=tuple(obj["pair_features"]),
            normalization={k: (float(v[0]), float(v[1])) for k, v in obj.get("normalization", {}).items()},
        )


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense x_uv for all ordered pairs of lines; the diagonal is unused (zeros)."""
    line_ids: tuple
    names: tuple
    x: np.ndarray  # (n, n, d)

    @property
    def n(self):
        return len(self.line_ids)

    @property
    def d(self):
        return self.x.shape[2]

    def index(self, line_id):
        return self.line_ids.index(line_id)

    def pair(self, u, v):
        if u == v:
            raise ValueError(f"no self-pair features ({u}, {v})")
        return self.x[self.index(u), self.index(v)]

    def flat(self):
        return self.x.reshape(self.n * self.n, self.d)


def extract_line_features(grid, base_flow):
    """Raw per-line feature table for the in-service lines of ``grid``."""
    if base_flow is None or len(base_flow.line_ids) != len(grid.lines) \
            or tuple(base_flow.line_ids) != tuple(grid.line_ids):
        raise ValueError("base flow is missing or was not solved on this grid")
    lines = [l for l in grid.lines if l.in_service]
    if not lines:
        raise ValueError("grid has no in-service lines")
    pos = {lid: i for i, lid in enumerate(grid.line_ids)}
    flow = np.array([abs(base_flow.line_flows[pos[l.line_id]]) for l in lines])

    bus_ids = grid.bus_ids
    bus_pos = {b: i for i, b in enumerate(bus_ids)}
    demand = {b.bus_id: b.demand for b in grid.buses}
    gen = {b.bus_id: b.generation for b in grid.buses}
    degree = {b: 0 for b in bus_ids}
    for l in lines:
        degree[l.from_bus] += 1
        degree[l.to_bus] += 1
    nbr_deg = {}
    for b in bus_ids:
        nb = [degree[l.to_bus if l.from_bus == b else l.from_bus]
              for l in lines if b in (l.from_bus, l.to_bus)]
        nbr_deg[b] = float(np.mean(nb)) if nb else 0.0

    g = nx.Graph()
    g.add_nodes_from(bus_ids)
    g.add_edges_from((l.from_bus, l.to_bus) for l in lines)
    btw = nx.edge_betweenness_centrality(g, normalized=False)
    island_of = {}
    for comp in nx.connected_components(g):
        for b in comp:
            island_of[b] = len(comp)

    rows = []
    for l, fl in zip(lines, flow):
        a, b = l.from_bus, l.to_bus
        edge_b = btw.get((a, b), btw.get((b, a), 0.0))
        rows.append([
            l.susceptance,
            l.capacity,
            fl,
            fl / l.capacity,
            demand[a] + demand[b],
            gen[a] + gen[b],
            degree[a] + degree[b],
            edge_b,
            island_of[a] / len(bus_ids),
            l.capacity - fl,
            0.5 * (nbr_deg[a] + nbr_deg[b]),
        ])

    nb = len(bus_ids)
    f = np.array([bus_pos[l.from_bus] for l in lines])
    t = np.array([bus_pos[l.to_bus] for l in lines])
    adj = sp.coo_matrix((np.ones(f.size), (f, t)), shape=(nb, nb)).tocsr()
    bd = shortest_path(adj, directed=False, unweighted=True)
    bd[~np.isfinite(bd)] = nb  # disconnected
    ld = np.minimum.reduce([bd[np.ix_(f, f)], bd[np.ix_(f, t)], bd[np.ix_(t, f)], bd[np.ix_(t, t)]])

    return LineFeatureTable(
        line_ids=tuple(l.line_id for l in lines),
        names=LINE_FEATURES,
        values=np.array(rows, dtype=float),
        endpoints=tuple((l.from_bus, l.to_bus) for l in lines),
        line_distance=ld,
    )


def _pair_raw(table, name):
    if name == "shared_bus":
        e = table.endpoints
        return np.array([[float(bool(set(a) & set(b))) for b in e] for a in e])
    if name == "line_distance":
        return table.line_distance.astype(float)
    if name == "loading_gap":
        ld = table.column("loading")
        return np.abs(ld[:, None] - ld[None, :])
    raise KeyError(f"unknown pair feature {name!r}")


def _scale(raw, lo, hi):
    if hi > lo:
        out = 2.0 * (raw - lo) / (hi - lo) - 1.0
    else:
        out = np.zeros_like(raw, dtype=float)
    return np.clip(out, -1.0, 1.0)


def build_pair_features(table, spec=None):
    """Assemble normalized x_uv; fit min-max scaling when ``spec`` is unfitted or None."""
    spec = spec or FeatureSpec()
    for name in spec.line_features:
        if name not in table.names:
            raise ValueError(f"feature {name!r} not in the line table")
    n = len(table.line_ids)
    offdiag = ~np.eye(n, dtype=bool)
    raws_line = {name: table.column(name) for name in spec.line_features}
    raws_pair = {name: _pair_raw(table, name) for name in spec.pair_features}

    if spec.fitted:
        norm = dict(spec.normalization)
    else:
        norm = {}
        for name, v in raws_line.items():
            norm[name] = (float(v.min()), float(v.max()))
        for name, m in raws_pair.items():
            vals = m[offdiag] if n > 1 else m.ravel()
            norm[name] = (float(vals.min()), float(vals.max())) if vals.size else (0.0, 0.0)
        spec = FeatureSpec(spec.line_features, spec.pair_features, norm)

    L = len(spec.line_features)
    per_line = np.stack([_scale(raws_line[nm], *norm[nm]) for nm in spec.line_features], axis=1) \
        if L else np.zeros((n, 0))
    x = np.zeros((n, n, spec.d))
    x[:, :, :L] = per_line[:, None, :]
    x[:, :, L:2 * L] = per_line[None, :, :]
    for j, nm in enumerate(spec.pair_features):
        x[:, :, 2 * L + j] = _scale(raws_pair[nm], *norm[nm])
    x[~offdiag] = 0.0
    return FeatureMatrix(table.line_ids, spec.names, x), spec


def features_for_grid(grid, spec=None):
    """Solve the base flow of ``grid`` and build its pair features."""
    from .dcsim import solve_dc_flow
    table = extract_line_features(grid, solve_dc_flow(grid))
    return build_pair_features(table, spec)


def write_feature_csv(features, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u", "v", *features.names])
        for i, u in enumerate(features.line_ids):
            for j, v in enumerate(features.line_ids):
                if i != j:
                    w.writerow([u, v, *(repr(float(z)) for z in features.x[i, j])])


def read_feature_csv(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        names = tuple(header[2:])
        rows = [(int(a), int(b), [float(z) for z in rest]) for a, b, *rest in r]
    ids = tuple(sorted({a for a, _, _ in rows} | {b for _, b, _ in rows}))
    pos = {lid: i for i, lid in enumerate(ids)}
    x = np.zeros((len(ids), len(ids), len(names)))
    seen = np.eye(len(ids), dtype=bool)
    for a, b, vals in rows:
        if len(vals) != len(names):
            raise ValueError(f"{path}: row ({a},{b}) has {len(vals)} values, expected {len(names)}")
        x[pos[a], pos[b]] = vals
        seen[pos[a], pos[b]] = True
    if not seen.all():
        raise ValueError(f"{path}: feature matrix is missing ordered pairs")
    return FeatureMatrix(ids, names, x)
