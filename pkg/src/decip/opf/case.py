"""Grid case model, plain-text case format, and MATPOWER-style ingester.

The model is polar-form and shunt-free: branches carry series impedance
only, so the bus admittance matrix is symmetric with zero row sums, and a
flat start with zero demand satisfies the power-flow equations exactly.
Line charging, shunts, transformer taps and flow limits are out of scope
and are dropped (with a note) by the MATPOWER ingester.

Case files (``*.opfc``) are line oriented; ``#`` starts a comment::

    base_mva 100
    ref <bus> <vset>
    bus <id> <Pd_MW> <Qd_MVAr> <vmin_pu> <vmax_pu>
    gen <bus> <Pmin_MW> <Pmax_MW> <Qmin_MVAr> <Qmax_MVAr> <c2> <c1> <c0>
    branch <from> <to> <r_pu> <x_pu>

Costs are in $/MW^2 h, $/MWh, $/h; GridCase stores everything per-unit on
the declared base (cost coefficients rescaled accordingly).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "CaseFormatError",
    "Bus",
    "Generator",
    "Branch",
    "GridCase",
    "parse_case",
    "load_case",
    "load_matpower_case",
]


class CaseFormatError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        where = f"line {lineno}: " if lineno is not None else ""
        super().__init__(where + message)
        self.lineno = lineno


@dataclass(frozen=True)
class Bus:
    id: int
    pd: float  # active demand, per-unit
    qd: float  # reactive demand, per-unit
    vmin: float
    vmax: float


@dataclass(frozen=True)
class Generator:
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    c2: float  # per-unit quadratic cost coefficient
    c1: float
    c0: float

    def cost(self, p: float) -> float:
        return self.c2 * p * p + self.c1 * p + self.c0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float


@dataclass
class GridCase:
    base_mva: float
    buses: list[Bus]
    gens: list[Generator]
    branches: list[Branch]
    ref_bus: int
    vref: float
    notes: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.buses = sorted(self.buses, key=lambda b: b.id)
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseFormatError("duplicate bus ids")
        if not self.buses:
            raise CaseFormatError("case has no buses")
        known = set(ids)
        if self.ref_bus not in known:
            raise CaseFormatError(f"reference bus {self.ref_bus} is not a bus")
        for g in self.gens:
            if g.bus not in known:
                raise CaseFormatError(f"generator references unknown bus {g.bus}")
            if g.pmin > g.pmax or g.qmin > g.qmax:
                raise CaseFormatError(f"generator at bus {g.bus} has unordered bounds")
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise CaseFormatError(
                    f"branch {br.from_bus}-{br.to_bus} references unknown bus"
                )
            if br.from_bus == br.to_bus:
                raise CaseFormatError(f"branch {br.from_bus}-{br.to_bus} is a self-loop")
            if br.r == 0.0 and br.x == 0.0:
                raise CaseFormatError(f"branch {br.from_bus}-{br.to_bus} has zero impedance")
        for b in self.buses:
            if b.vmin > b.vmax:
                raise CaseFormatError(f"bus {b.id} has vmin > vmax")
        if not self._connected():
            raise CaseFormatError("grid graph is not connected")

    def _connected(self) -> bool:
        if not self.buses:
            return False
        adj = self.adjacency()
        seen = {self.buses[0].id}
        stack = [self.buses[0].id]
        while stack:
            k = stack.pop()
            for m in adj.get(k, ()):  # sorted adjacency
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        return len(seen) == len(self.buses)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def bus(self, bus_id: int) -> Bus:
        idx = self.bus_index()[bus_id]
        return self.buses[idx]

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, set[int]] = {b.id: set() for b in self.buses}
        for br in self.branches:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
        return {k: sorted(v) for k, v in adj.items()}

    def admittance(self) -> tuple[np.ndarray, np.ndarray]:
        """Series-only bus admittance split as (G, B); symmetric, zero row sums."""
        idx = self.bus_index()
        n = self.n_bus
        G = np.zeros((n, n))
        B = np.zeros((n, n))
        for br in self.branches:
            y = 1.0 / complex(br.r, br.x)
            a, b = idx[br.from_bus], idx[br.to_bus]
            G[a, b] -= y.real
            G[b, a] -= y.real
            B[a, b] -= y.imag
            B[b, a] -= y.imag
            G[a, a] += y.real
            G[b, b] += y.real
            B[a, a] += y.imag
            B[b, b] += y.imag
        return G, B


def parse_case(text: str) -> GridCase:
    base = None
    ref = None
    vref = 1.0
    buses: list[Bus] = []
    gens: list[Generator] = []
    branches: list[Branch] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0].lower()
        try:
            if key == "base_mva":
                base = float(parts[1])
            elif key == "ref":
                if ref is not None:
                    raise CaseFormatError("multiple reference buses", lineno)
                ref = int(parts[1])
                vref = float(parts[2]) if len(parts) > 2 else 1.0
            elif key == "bus":
                if base is None:
                    raise CaseFormatError("bus before base_mva", lineno)
                buses.append(
                    Bus(
                        id=int(parts[1]),
                        pd=float(parts[2]) / base,
                        qd=float(parts[3]) / base,
                        vmin=float(parts[4]),
                        vmax=float(parts[5]),
                    )
                )
            elif key == "gen":
                if base is None:
                    raise CaseFormatError("gen before base_mva", lineno)
                gens.append(
                    Generator(
                        bus=int(parts[1]),
                        pmin=float(parts[2]) / base,
                        pmax=float(parts[3]) / base,
                        qmin=float(parts[4]) / base,
                        qmax=float(parts[5]) / base,
                        c2=float(parts[6]) * base * base,
                        c1=float(parts[7]) * base,
                        c0=float(parts[8]),
                    )
                )
            elif key == "branch":
                branches.append(
                    Branch(
                        from_bus=int(parts[1]),
                        to_bus=int(parts[2]),
                        r=float(parts[3]),
                        x=float(parts[4]),
                    )
                )
            else:
                raise CaseFormatError(f"unknown directive {key!r}", lineno)
        except (IndexError, ValueError) as exc:
            if isinstance(exc, CaseFormatError):
                raise
            raise CaseFormatError(f"malformed {key} row: {exc}", lineno) from None

    if base is None:
        raise CaseFormatError("missing base_mva")
    if ref is None:
        raise CaseFormatError("missing reference bus (ref directive)")
    return GridCase(
        base_mva=base, buses=buses, gens=gens, branches=branches, ref_bus=ref, vref=vref
    )


def load_case(path: str | Path) -> GridCase:
    return parse_case(Path(path).read_text())


_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\];", re.DOTALL)


def _matpower_matrix(name: str, blocks: dict[str, str]) -> list[list[float]]:
    if name not in blocks:
        raise CaseFormatError(f"MATPOWER file has no mpc.{name} matrix")
    rows = []
    for chunk in blocks[name].replace("\n", ";").split(";"):
        chunk = chunk.split("%", 1)[0].strip()
        if not chunk:
            continue
        rows.append([float(v) for v in chunk.replace(",", " ").split()])
    return rows


def load_matpower_case(path: str | Path) -> GridCase:
    """Ingest a MATPOWER-format .m case file into the shunt-free model.

    Out-of-service generators and branches are dropped; bus/branch shunt
    elements, line charging and transformer tap/shift data are outside the
    model and recorded in ``case.notes`` when nonzero.  Generator costs must
    be polynomial of degree <= 2.
    """
    text = Path(path).read_text()
    text = re.sub(r"%.*", "", text)
    blocks = {m.group(1): m.group(2) for m in _MATRIX_RE.finditer(text)}
    base_match = re.search(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)", text)
    if base_match is None:
        raise CaseFormatError("MATPOWER file has no mpc.baseMVA")
    base = float(base_match.group(1))

    notes: list[str] = []
    buses = []
    ref = None
    bus_vm: dict[int, float] = {}
    for row in _matpower_matrix("bus", blocks):
        bus_id, bus_type = int(row[0]), int(row[1])
        if bus_type == 3:
            if ref is not None:
                raise CaseFormatError("multiple reference buses in MATPOWER file")
            ref = bus_id
        if row[4] != 0.0 or row[5] != 0.0:
            notes.append(f"bus {bus_id}: shunt (Gs, Bs) dropped")
        bus_vm[bus_id] = row[7]
        buses.append(
            Bus(id=bus_id, pd=row[2] / base, qd=row[3] / base, vmin=row[12], vmax=row[11])
        )
    if ref is None:
        raise CaseFormatError("MATPOWER file has no type-3 (reference) bus")

    gen_rows = [r for r in _matpower_matrix("gen", blocks)]
    cost_rows = _matpower_matrix("gencost", blocks) if "gencost" in blocks else None
    if cost_rows is not None and len(cost_rows) not in (len(gen_rows), 2 * len(gen_rows)):
        raise CaseFormatError("gencost row count does not match gen table")
    gens = []
    vref = None
    for gi, row in enumerate(gen_rows):
        status = row[7]
        bus_id = int(row[0])
        if bus_id == ref and vref is None:
            vref = row[5]
        if status <= 0:
            notes.append(f"generator {gi} at bus {bus_id}: out of service, dropped")
            continue
        c2 = c1 = c0 = 0.0
        if cost_rows is not None:
            cost = cost_rows[gi]
            model, ncost = int(cost[0]), int(cost[3])
            if model != 2:
                raise CaseFormatError(f"generator {gi}: only polynomial costs supported")
            coeffs = cost[4 : 4 + ncost]
            if ncost > 3:
                raise CaseFormatError(f"generator {gi}: cost degree {ncost - 1} > 2")
            padded = [0.0] * (3 - len(coeffs)) + list(coeffs)
            c2, c1, c0 = padded
        gens.append(
            Generator(
                bus=bus_id,
                pmin=row[9] / base,
                pmax=row[8] / base,
                qmin=row[4] / base,
                qmax=row[3] / base,
                c2=c2 * base * base,
                c1=c1 * base,
                c0=c0,
            )
        )

    branches = []
    for row in _matpower_matrix("branch", blocks):
        status = row[10] if len(row) > 10 else 1.0
        if status == 0.0:
            continue
        if len(row) > 4 and row[4] != 0.0:
            notes.append(f"branch {int(row[0])}-{int(row[1])}: line charging dropped")
        if len(row) > 8 and (row[8] not in (0.0, 1.0) or row[9] != 0.0):
            notes.append(f"branch {int(row[0])}-{int(row[1])}: tap/shift dropped")
        branches.append(
            Branch(from_bus=int(row[0]), to_bus=int(row[1]), r=row[2], x=row[3])
        )

    if vref is None:
        vref = bus_vm.get(ref, 1.0) or 1.0
    return GridCase(
        base_mva=base,
        buses=buses,
        gens=gens,
        branches=branches,
        ref_bus=ref,
        vref=vref,
        notes=notes,
    )
