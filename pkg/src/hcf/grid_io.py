"""Grid case model, parsers (CSV and a MATPOWER table subset) and serialization.

CSV layout (``.case.csv``)::

    #buses
    bus_id,demand
    1,0.0
    #gens
    bus_id,output
    1,1.0
    #lines
    line_id,from_bus,to_bus,susceptance,capacity,status
    1,1,2,1.0,2.0,1

Header rows are optional, ``status`` defaults to 1, and several generator
rows on one bus add up.
"""
import re
from dataclasses import dataclass, replace
from pathlib import Path

BALANCE_TOL = 1e-6


class GridFormatError(ValueError):
    """Malformed or invalid case data."""

    def __init__(self, msg, line=None, col=None):
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {col}" if col is not None else "") + ": "
        super().__init__(where + msg)
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Bus:
    bus_id: int
    demand: float = 0.0
    generation: float = 0.0


@dataclass(frozen=True)
class Line:
    line_id: int
    from_bus: int
    to_bus: int
    susceptance: float
    capacity: float
    in_service: bool = True


@dataclass(frozen=True)
class GridCase:
    buses: tuple
    lines: tuple

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(sorted(self.buses, key=lambda b: b.bus_id)))
        object.__setattr__(self, "lines", tuple(sorted(self.lines, key=lambda l: l.line_id)))
        _check_invariants(self)

    @property
    def bus_ids(self):
        return tuple(b.bus_id for b in self.buses)

    @property
    def line_ids(self):
        return tuple(l.line_id for l in self.lines)

    @property
    def in_service_line_ids(self):
        return tuple(l.line_id for l in self.lines if l.in_service)

    def line(self, line_id):
        for l in self.lines:
            if l.line_id == line_id:
                return l
        raise KeyError(line_id)

    @property
    def total_demand(self):
        return sum(b.demand for b in self.buses)

    @property
    def total_generation(self):
        return sum(b.generation for b in self.buses)

    def with_capacity_factor(self, line_ids, factor):
        """Copy with the capacity of ``line_ids`` multiplied by ``factor``."""
        chosen = set(line_ids)
        unknown = chosen - set(self.line_ids)
        if unknown:
            raise KeyError(f"unknown line ids {sorted(unknown)}")
        lines = [replace(l, capacity=l.capacity * factor) if l.line_id in chosen else l
                 for l in self.lines]
        return GridCase(self.buses, tuple(lines))

    def with_demand_factor(self, factor, bus_ids=None, follow_generation=False):
        """Copy with demand scaled by ``factor`` (on ``bus_ids`` or everywhere).

        With ``follow_generation`` every generator is rescaled pro rata so the
        case stays balanced.
        """
        chosen = set(self.bus_ids if bus_ids is None else bus_ids)
        buses = [replace(b, demand=b.demand * factor) if b.bus_id in chosen else b
                 for b in self.buses]
        if follow_generation and self.total_generation > 0:
            ratio = sum(b.demand for b in buses) / self.total_generation
            buses = [replace(b, generation=b.generation * ratio) for b in buses]
        return GridCase(tuple(buses), self.lines)

    def without_lines(self, line_ids):
        gone = set(line_ids)
        return GridCase(self.buses, tuple(l for l in self.lines if l.line_id not in gone))


def _check_invariants(grid):
    seen = set()
    for b in grid.buses:
        if b.bus_id in seen:
            raise GridFormatError(f"duplicate bus id {b.bus_id}")
        seen.add(b.bus_id)
        if b.demand < 0 or b.generation < 0:
            raise GridFormatError(f"bus {b.bus_id}: negative demand or generation")
    line_seen = set()
    for l in grid.lines:
        if l.line_id in line_seen:
            raise GridFormatError(f"duplicate line id {l.line_id}")
        line_seen.add(l.line_id)
        for end in (l.from_bus, l.to_bus):
            if end not in seen:
                raise GridFormatError(f"line {l.line_id} references unknown bus {end}")
        if l.from_bus == l.to_bus:
            raise GridFormatError(f"line {l.line_id} is a self-loop on bus {l.from_bus}")
        if not l.susceptance > 0:
            raise GridFormatError(f"line {l.line_id}: susceptance must be positive")
        if not l.capacity > 0:
            raise GridFormatError(f"line {l.line_id}: capacity must be positive")


@dataclass(frozen=True)
class BalanceReport:
    surplus: float
    balanced: bool


def validate_balance(grid, tol=BALANCE_TOL):
    surplus = grid.total_generation - grid.total_demand
    return BalanceReport(surplus=surplus, balanced=abs(surplus) <= tol)


# ---------------------------------------------------------------- CSV format

_SECTIONS = ("#buses", "#gens", "#lines")


def _num(tok, lineno, col, kind=float):
    try:
        if kind is int:
            val = float(tok)
            if not val.is_integer():
                raise ValueError
            return int(val)
        return float(tok)
    except ValueError:
        raise GridFormatError(f"expected {kind.__name__}, got {tok!r}", lineno, col) from None


def _parse_csv(text):
    section = None
    demand = {}
    gen = {}
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s:
            continue
        if s.startswith("#"):
            key = s.split(",")[0].strip().lower()
            if key not in _SECTIONS:
                raise GridFormatError(f"unknown section {s!r}", lineno, 1)
            section = key
            continue
        if section is None:
            raise GridFormatError("data before the first section header", lineno, 1)
        toks = [t.strip() for t in s.split(",")]
        if not re.match(r"^[-+0-9.]", toks[0]):
            continue  # column header
        if section == "#buses":
            if len(toks) < 2:
                raise GridFormatError("bus row needs bus_id,demand", lineno, len(toks) + 1)
            bid = _num(toks[0], lineno, 1, int)
            if bid in demand:
                raise GridFormatError(f"duplicate bus id {bid}", lineno, 1)
            demand[bid] = _num(toks[1], lineno, 2)
        elif section == "#gens":
            if len(toks) < 2:
                raise GridFormatError("gen row needs bus_id,output", lineno, len(toks) + 1)
            bid = _num(toks[0], lineno, 1, int)
            gen[bid] = gen.get(bid, 0.0) + _num(toks[1], lineno, 2)
        else:
            if len(toks) < 5:
                raise GridFormatError(
                    "line row needs line_id,from_bus,to_bus,susceptance,capacity",
                    lineno, len(toks) + 1)
            lid = _num(toks[0], lineno, 1, int)
            f = _num(toks[1], lineno, 2, int)
            t = _num(toks[2], lineno, 3, int)
            b = _num(toks[3], lineno, 4)
            c = _num(toks[4], lineno, 5)
            status = _num(toks[5], lineno, 6, int) if len(toks) > 5 and toks[5] else 1
            if not b > 0:
                raise GridFormatError(f"line {lid}: susceptance must be positive", lineno, 4)
            if not c > 0:
                raise GridFormatError(f"line {lid}: capacity must be positive", lineno, 5)
            lines.append((lineno, Line(lid, f, t, b, c, bool(status))))
    for bid in gen:
        if bid not in demand:
            raise GridFormatError(f"generator on unknown bus {bid}")
    for lineno, l in lines:
        for col, end in ((2, l.from_bus), (3, l.to_bus)):
            if end not in demand:
                raise GridFormatError(f"line {l.line_id} references unknown bus {end}", lineno, col)
    buses = tuple(Bus(bid, d, gen.get(bid, 0.0)) for bid, d in demand.items())
    return GridCase(buses, tuple(l for _, l in lines))


# ---------------------------------------------------- MATPOWER table subset

_MATRIX_RE = re.compile(r"mpc\.(bus|gen|branch)\s*=\s*\[", re.IGNORECASE)


def _matpower_tables(text):
    tables = {}
    for m in _MATRIX_RE.finditer(text):
        name = m.group(1).lower()
        start = m.end()
        end = text.find("]", start)
        if end < 0:
            line = text.count("\n", 0, m.start()) + 1
            raise GridFormatError(f"unterminated mpc.{name} matrix", line, m.start() - text.rfind("\n", 0, m.start()))
        rows = []
        body_line = text.count("\n", 0, start) + 1
        for offset, chunk in enumerate(text[start:end].split("\n")):
            lineno = body_line + offset
            chunk = chunk.split("%", 1)[0]
            for part in chunk.split(";"):
                toks = part.replace(",", " ").split()
                if not toks:
                    continue
                row = []
                for col, tok in enumerate(toks, start=1):
                    try:
                        row.append(float(tok))
                    except ValueError:
                        raise GridFormatError(f"bad number {tok!r} in mpc.{name}", lineno, col) from None
                rows.append((lineno, row))
        tables[name] = rows
    for name in ("bus", "branch"):
        if name not in tables:
            raise GridFormatError(f"missing mpc.{name} matrix")
    tables.setdefault("gen", [])
    return tables


def _parse_matpower(text):
    t = _matpower_tables(text)
    demand = {}
    for lineno, row in t["bus"]:
        if len(row) < 3:
            raise GridFormatError("bus row needs at least BUS_I, BUS_TYPE, PD", lineno, len(row) + 1)
        bid = int(row[0])
        if bid in demand:
            raise GridFormatError(f"duplicate bus id {bid}", lineno, 1)
        demand[bid] = row[2]
    gen = {}
    for lineno, row in t["gen"]:
        if len(row) < 2:
            raise GridFormatError("gen row needs at least GEN_BUS, PG", lineno, len(row) + 1)
        if len(row) > 7 and row[7] <= 0:
            continue  # GEN_STATUS off
        bid = int(row[0])
        if bid not in demand:
            raise GridFormatError(f"generator on unknown bus {bid}", lineno, 1)
        gen[bid] = gen.get(bid, 0.0) + row[1]
    lines = []
    for k, (lineno, row) in enumerate(t["branch"], start=1):
        if len(row) < 6:
            raise GridFormatError("branch row needs F_BUS, T_BUS, BR_R, BR_X, BR_B, RATE_A", lineno, len(row) + 1)
        f, to = int(row[0]), int(row[1])
        for col, end in ((1, f), (2, to)):
            if end not in demand:
                raise GridFormatError(f"line {k} references unknown bus {end}", lineno, col)
        x, rate = row[3], row[5]
        if not x > 0:
            raise GridFormatError(f"line {k}: reactance must be positive", lineno, 4)
        if not rate > 0:
            raise GridFormatError(f"line {k}: capacity (RATE_A) must be positive", lineno, 6)
        status = row[10] > 0 if len(row) > 10 else True
        lines.append(Line(k, f, to, 1.0 / x, rate, status))
    buses = tuple(Bus(bid, d, gen.get(bid, 0.0)) for bid, d in demand.items())
    return GridCase(buses, tuple(lines))


def parse_grid_case(text, format="csv"):
    """Parse case text; ``format`` is ``"csv"`` or ``"matpower"``."""
    if not text or not text.strip():
        raise GridFormatError("empty case file")
    if format == "csv":
        return _parse_csv(text)
    if format in ("matpower", "matpower-subset", "m"):
        return _parse_matpower(text)
    raise ValueError(f"unknown case format {format!r}")


def serialize_grid_case(grid):
    """Canonical CSV text (sorted ids, exact float repr)."""
    out = ["#buses", "bus_id,demand"]
    out += [f"{b.bus_id},{float(b.demand)!r}" for b in grid.buses]
    out += ["#gens", "bus_id,output"]
    out += [f"{b.bus_id},{float(b.generation)!r}" for b in grid.buses if b.generation != 0]
    out += ["#lines", "line_id,from_bus,to_bus,susceptance,capacity,status"]
    out += [f"{l.line_id},{l.from_bus},{l.to_bus},{float(l.susceptance)!r},{float(l.capacity)!r},{int(l.in_service)}"
            for l in grid.lines]
    return "\n".join(out) + "\n"


def read_grid_case(path):
    path = Path(path)
    fmt = "matpower" if path.suffix.lower() == ".m" else "csv"
    return parse_grid_case(path.read_text(encoding="utf-8"), fmt)


def write_grid_case(grid, path):
    Path(path).write_text(serialize_grid_case(grid), encoding="utf-8")
