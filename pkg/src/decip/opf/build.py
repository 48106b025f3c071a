"""Regional decomposition of the polar-form OPF into a partitioned NLP.

Each region owns a set of buses and models, besides its own voltage
magnitude/angle and generator injection variables, duplicated copies of the
boundary buses it is connected to across tie lines.  Power-flow mismatch
equations are enforced at owned buses only (every Y-neighbor of an owned bus
is present locally, owned or copied); consensus rows equate the magnitude
and angle of every copy with its owner, with right-hand side zero.  Voltage
bounds apply to owned instances only, so an active bound never appears
twice with consensus-linked gradients (which would break constraint
regularity).

Region variable layout: [e (local buses), theta (local buses),
p (local generators), q (local generators)], local buses ordered as sorted
owned ids followed by sorted copied ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dip import SolverConfig, default_start, dip_solve
from ..oracle import OracleFailure, centralized_ip_solve
from ..problem import PartitionedProblem, RowSparseMatrix, SubsystemSpec
from .case import CaseFormatError, GridCase

__all__ = [
    "PartitionError",
    "RegionPartition",
    "parse_partition",
    "load_partition",
    "single_region_partition",
    "OpfLayout",
    "build_opf_subproblems",
    "OpfComparison",
    "verify_against_oracle",
]


class PartitionError(ValueError):
    pass


@dataclass
class RegionPartition:
    """bus -> region assignment plus the derived tie lines."""

    assignment: dict[int, int]
    regions: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.regions:
            self.regions = sorted(set(self.assignment.values()))

    def region_buses(self, region: int) -> list[int]:
        return sorted(b for b, r in self.assignment.items() if r == region)

    def tie_lines(self, case: GridCase) -> list[tuple[int, int]]:
        ties = []
        for br in case.branches:
            if self.assignment[br.from_bus] != self.assignment[br.to_bus]:
                ties.append((br.from_bus, br.to_bus))
        return ties

    def validate(self, case: GridCase) -> None:
        known = {b.id for b in case.buses}
        unknown = sorted(set(self.assignment) - known)
        if unknown:
            raise PartitionError(f"partition references unknown buses {unknown}")
        missing = sorted(known - set(self.assignment))
        if missing:
            raise PartitionError(f"buses without region assignment: {missing}")
        adj = case.adjacency()
        for region in self.regions:
            buses = self.region_buses(region)
            if not buses:
                raise PartitionError(f"region {region} is empty")
            seen = {buses[0]}
            stack = [buses[0]]
            members = set(buses)
            while stack:
                k = stack.pop()
                for m in adj[k]:
                    if m in members and m not in seen:
                        seen.add(m)
                        stack.append(m)
            if seen != members:
                raise PartitionError(f"region {region} subgraph is not connected")


def parse_partition(text: str, case: GridCase) -> RegionPartition:
    assignment: dict[int, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise PartitionError(f"line {lineno}: expected '<bus> <region>'")
        bus, region = int(parts[0]), int(parts[1])
        if bus in assignment:
            raise PartitionError(f"line {lineno}: bus {bus} assigned twice")
        assignment[bus] = region
    partition = RegionPartition(assignment=assignment)
    partition.validate(case)
    return partition


def load_partition(path: str | Path, case: GridCase) -> RegionPartition:
    return parse_partition(Path(path).read_text(), case)


def single_region_partition(case: GridCase) -> RegionPartition:
    return RegionPartition(assignment={b.id: 0 for b in case.buses})


@dataclass
class _Region:
    index: int
    owned: list[int]            # bus ids, sorted
    copied: list[int]           # bus ids owned elsewhere, sorted
    local_buses: list[int]      # owned + copied
    pos: dict[int, int]         # bus id -> local bus position
    gen_ids: list[int]          # indices into case.gens
    n_local: int
    n_gen: int

    @property
    def dim(self) -> int:
        return 2 * self.n_local + 2 * self.n_gen

    def e_col(self, bus: int) -> int:
        return self.pos[bus]

    def th_col(self, bus: int) -> int:
        return self.n_local + self.pos[bus]

    def p_col(self, g_local: int) -> int:
        return 2 * self.n_local + g_local

    def q_col(self, g_local: int) -> int:
        return 2 * self.n_local + self.n_gen + g_local


class _RegionEvaluator:
    """Polar power-flow callbacks for one region, with analytic derivatives.

    Equality rows: active mismatch per owned bus, then reactive mismatch per
    owned bus, then (if the region owns the reference bus) the voltage
    magnitude and angle reference conditions.
    """

    def __init__(self, case: GridCase, region: _Region):
        self.region = region
        # One link per incident branch: (neighbor position, series g, series b,
        # off-diagonal admittance entries -g, -b).  Keeping the diagonal
        # contribution paired with its branch makes the flat-start zero-demand
        # mismatch exactly zero (each branch contributes g - g = 0, b - b = 0).
        self.links: dict[int, list[tuple[int, float, float, float, float]]] = {
            k: [] for k in region.owned
        }
        for br in case.branches:
            y = 1.0 / complex(br.r, br.x)
            for k, m in ((br.from_bus, br.to_bus), (br.to_bus, br.from_bus)):
                if k in self.links:
                    self.links[k].append(
                        (region.pos[m], y.real, y.imag, -y.real, -y.imag)
                    )
        self.demand = {b.id: (b.pd, b.qd) for b in case.buses}
        self.gens = [case.gens[g] for g in region.gen_ids]
        self.gens_at: dict[int, list[int]] = {}
        for g_local, gen in enumerate(self.gens):
            self.gens_at.setdefault(gen.bus, []).append(g_local)
        self.owns_ref = case.ref_bus in region.owned
        self.ref_bus = case.ref_bus
        self.vref = case.vref
        self.n_owned = len(region.owned)
        self.n_eq = 2 * self.n_owned + (2 if self.owns_ref else 0)

    # -- power flow pieces -------------------------------------------------
    def _flows(self, x: np.ndarray, k: int):
        """Injection P_k, Q_k at owned bus k plus the per-branch trig terms."""
        r = self.region
        n_l = r.n_local
        e, th = x[:n_l], x[n_l : 2 * n_l]
        a = r.pos[k]
        p = 0.0
        q = 0.0
        terms = []
        for m, g_br, b_br, gkm, bkm in self.links[k]:
            c = np.cos(th[a] - th[m])
            s = np.sin(th[a] - th[m])
            t = e[a] * e[m] * (gkm * c + bkm * s)
            u = e[a] * e[m] * (gkm * s - bkm * c)
            p += e[a] * e[a] * g_br + t
            q += -e[a] * e[a] * b_br + u
            terms.append((m, g_br, b_br, gkm, bkm, c, s, t, u))
        return p, q, terms

    def objective(self, x: np.ndarray) -> float:
        r = self.region
        total = 0.0
        for g_local, gen in enumerate(self.gens):
            total += gen.cost(x[r.p_col(g_local)])
        return total

    def grad_objective(self, x: np.ndarray) -> np.ndarray:
        r = self.region
        out = np.zeros(r.dim)
        for g_local, gen in enumerate(self.gens):
            col = r.p_col(g_local)
            out[col] = 2.0 * gen.c2 * x[col] + gen.c1
        return out

    def equalities(self, x: np.ndarray) -> np.ndarray:
        r = self.region
        out = np.zeros(self.n_eq)
        for row, k in enumerate(r.owned):
            p_calc, q_calc, _ = self._flows(x, k)
            pd, qd = self.demand[k]
            p_gen = sum(x[r.p_col(g)] for g in self.gens_at.get(k, ()))
            q_gen = sum(x[r.q_col(g)] for g in self.gens_at.get(k, ()))
            out[row] = p_gen - pd - p_calc
            out[self.n_owned + row] = q_gen - qd - q_calc
        if self.owns_ref:
            out[-2] = x[r.e_col(self.ref_bus)] - self.vref
            out[-1] = x[r.th_col(self.ref_bus)]
        return out

    def jac_equalities(self, x: np.ndarray) -> np.ndarray:
        r = self.region
        n_l = r.n_local
        e = x[:n_l]
        jac = np.zeros((self.n_eq, r.dim))
        for row, k in enumerate(r.owned):
            a = r.pos[k]
            qrow = self.n_owned + row
            _, _, terms = self._flows(x, k)
            for m, g_br, b_br, gkm, bkm, c, s, t, u in terms:
                dtc = gkm * c + bkm * s   # t / (e_a e_m)
                dus = gkm * s - bkm * c   # u / (e_a e_m)
                # active mismatch row: -dP/dx
                jac[row, a] -= 2.0 * e[a] * g_br + e[m] * dtc
                jac[row, m] -= e[a] * dtc
                jac[row, n_l + a] -= -u
                jac[row, n_l + m] -= u
                # reactive mismatch row: -dQ/dx
                jac[qrow, a] -= -2.0 * e[a] * b_br + e[m] * dus
                jac[qrow, m] -= e[a] * dus
                jac[qrow, n_l + a] -= t
                jac[qrow, n_l + m] -= -t
            for g in self.gens_at.get(k, ()):
                jac[row, r.p_col(g)] = 1.0
                jac[qrow, r.q_col(g)] = 1.0
        if self.owns_ref:
            jac[-2, r.e_col(self.ref_bus)] = 1.0
            jac[-1, r.th_col(self.ref_bus)] = 1.0
        return jac

    def hess_lagrangian(self, x: np.ndarray, gamma: np.ndarray, mu: np.ndarray) -> np.ndarray:
        """Cost curvature plus the mismatch rows' second derivatives.

        Inequalities are affine (no contribution); the reference rows are
        affine too.  Mismatch rows enter with weight -gamma since the rows
        subtract the computed flows.
        """
        r = self.region
        n_l = r.n_local
        e = x[:n_l]
        H = np.zeros((r.dim, r.dim))
        for g_local, gen in enumerate(self.gens):
            col = r.p_col(g_local)
            H[col, col] += 2.0 * gen.c2
        for row, k in enumerate(r.owned):
            a = r.pos[k]
            wp = -gamma[row]
            wq = -gamma[self.n_owned + row]
            _, _, terms = self._flows(x, k)
            for m, g_br, b_br, gkm, bkm, c, s, t, u in terms:
                dtc = gkm * c + bkm * s
                dus = gkm * s - bkm * c
                H[a, a] += wp * 2.0 * g_br + wq * (-2.0 * b_br)
                ta, tm = n_l + a, n_l + m
                # d2/de_a de_m
                val = wp * dtc + wq * dus
                H[a, m] += val
                H[m, a] += val
                # d2/de_a dth_a and d2/de_a dth_m
                val = wp * (e[m] * -dus) + wq * (e[m] * dtc)
                H[a, ta] += val
                H[ta, a] += val
                val = wp * (e[m] * dus) + wq * (e[m] * -dtc)
                H[a, tm] += val
                H[tm, a] += val
                # d2/de_m dth_a and d2/de_m dth_m
                val = wp * (e[a] * -dus) + wq * (e[a] * dtc)
                H[m, ta] += val
                H[ta, m] += val
                val = wp * (e[a] * dus) + wq * (e[a] * -dtc)
                H[m, tm] += val
                H[tm, m] += val
                # angle-angle block
                H[ta, ta] += wp * (-t) + wq * (-u)
                H[tm, tm] += wp * (-t) + wq * (-u)
                H[ta, tm] += wp * t + wq * u
                H[tm, ta] += wp * t + wq * u
        return H

    # -- bounds -------------------------------------------------------------
    def inequality_rows(self, case: GridCase) -> tuple[np.ndarray, np.ndarray]:
        """Constant Jacobian and offsets for h(x) = J x + offset <= 0."""
        r = self.region
        rows = []
        offsets = []
        for k in r.owned:
            bus = case.bus(k)
            up = np.zeros(r.dim)
            up[r.e_col(k)] = 1.0
            rows.append(up)
            offsets.append(-bus.vmax)
            lo = np.zeros(r.dim)
            lo[r.e_col(k)] = -1.0
            rows.append(lo)
            offsets.append(bus.vmin)
        for g_local, gen in enumerate(self.gens):
            for col, lo_val, hi_val in (
                (r.p_col(g_local), gen.pmin, gen.pmax),
                (r.q_col(g_local), gen.qmin, gen.qmax),
            ):
                up = np.zeros(r.dim)
                up[col] = 1.0
                rows.append(up)
                offsets.append(-hi_val)
                lo = np.zeros(r.dim)
                lo[col] = -1.0
                rows.append(lo)
                offsets.append(lo_val)
        return np.array(rows), np.array(offsets)


@dataclass
class OpfLayout:
    """Mapping between region variables and case-space quantities."""

    case: GridCase
    partition: RegionPartition
    regions: list[_Region]
    consensus_labels: list[str] = field(default_factory=list)

    def flat_start(self) -> list[np.ndarray]:
        """Unit magnitudes, zero angles, mid-range injections."""
        out = []
        for region in self.regions:
            x = np.zeros(region.dim)
            x[: region.n_local] = 1.0
            for g_local, gid in enumerate(region.gen_ids):
                gen = self.case.gens[gid]
                x[region.p_col(g_local)] = 0.5 * (gen.pmin + gen.pmax)
                x[region.q_col(g_local)] = 0.5 * (gen.qmin + gen.qmax)
            out.append(x)
        return out

    def case_vectors(self, x_parts: list[np.ndarray]):
        """Bus magnitudes/angles (duplicates averaged) and gen injections."""
        n_bus = self.case.n_bus
        idx = self.case.bus_index()
        e_sum = np.zeros(n_bus)
        th_sum = np.zeros(n_bus)
        count = np.zeros(n_bus)
        p = np.zeros(len(self.case.gens))
        q = np.zeros(len(self.case.gens))
        for region, x in zip(self.regions, x_parts):
            for bus in region.local_buses:
                j = idx[bus]
                e_sum[j] += x[region.e_col(bus)]
                th_sum[j] += x[region.th_col(bus)]
                count[j] += 1
            for g_local, gid in enumerate(region.gen_ids):
                p[gid] = x[region.p_col(g_local)]
                q[gid] = x[region.q_col(g_local)]
        return e_sum / count, th_sum / count, p, q

    def case_x(self, x_parts: list[np.ndarray]) -> np.ndarray:
        e, th, p, q = self.case_vectors(x_parts)
        return np.concatenate([e, th, p, q])


def build_opf_subproblems(
    case: GridCase,
    partition: RegionPartition,
    linearized: bool = False,
) -> tuple[PartitionedProblem, OpfLayout]:
    """Assemble the region subsystems and boundary-consensus coupling.

    ``linearized`` replaces the power-flow mismatches by their first-order
    expansion at the flat start (a convex QP surrogate with the same
    consensus structure), used for exactness cross-checks.
    """
    partition.validate(case)
    assignment = partition.assignment

    regions: list[_Region] = []
    for rid in partition.regions:
        owned = partition.region_buses(rid)
        copied: set[int] = set()
        for a, b in partition.tie_lines(case):
            if assignment[a] == rid and assignment[b] != rid:
                copied.add(b)
            if assignment[b] == rid and assignment[a] != rid:
                copied.add(a)
        local = owned + sorted(copied)
        gen_ids = [gi for gi, g in enumerate(case.gens) if assignment[g.bus] == rid]
        regions.append(
            _Region(
                index=rid,
                owned=owned,
                copied=sorted(copied),
                local_buses=local,
                pos={bus: i for i, bus in enumerate(local)},
                gen_ids=gen_ids,
                n_local=len(local),
                n_gen=len(gen_ids),
            )
        )
    region_of = {rid: i for i, rid in enumerate(partition.regions)}

    # Consensus rows: (owner, copier) pairs per copied bus, e then theta.
    triplets: dict[int, list[tuple[int, int, float]]] = {i: [] for i in range(len(regions))}
    labels: list[str] = []
    row = 0
    for region in regions:
        for bus in region.copied:
            owner = regions[region_of[assignment[bus]]]
            copier = region
            for quantity, col_of in (("e", "e_col"), ("th", "th_col")):
                triplets[region_of[owner.index]].append((row, getattr(owner, col_of)(bus), 1.0))
                triplets[region_of[copier.index]].append((row, getattr(copier, col_of)(bus), -1.0))
                labels.append(f"{quantity}[bus {bus}] region {owner.index} = region {copier.index}")
                row += 1
    n_c = row

    layout = OpfLayout(case=case, partition=partition, regions=regions, consensus_labels=labels)
    flat = layout.flat_start()

    specs = []
    for i, region in enumerate(regions):
        ev = _RegionEvaluator(case, region)
        h_jac, h_off = ev.inequality_rows(case)
        coupling = RowSparseMatrix.from_triplets((n_c, region.dim), triplets[i])

        if linearized:
            x0 = flat[i]
            g0 = ev.equalities(x0)
            j0 = ev.jac_equalities(x0)

            def g_fun(x, g0=g0, j0=j0, x0=x0):
                return g0 + j0 @ (x - x0)

            def jac_g_fun(x, j0=j0):
                return j0

            def hess_fun(x, gamma, mu, ev=ev):
                H = np.zeros((ev.region.dim, ev.region.dim))
                for g_local, gen in enumerate(ev.gens):
                    col = ev.region.p_col(g_local)
                    H[col, col] = 2.0 * gen.c2
                return H

        else:
            g_fun = ev.equalities
            jac_g_fun = ev.jac_equalities
            hess_fun = ev.hess_lagrangian

        def h_fun(x, h_jac=h_jac, h_off=h_off):
            return h_jac @ x + h_off

        def jac_h_fun(x, h_jac=h_jac):
            return h_jac

        specs.append(
            SubsystemSpec(
                index=i,
                dim=region.dim,
                n_eq=ev.n_eq,
                n_ineq=h_jac.shape[0],
                f=ev.objective,
                grad_f=ev.grad_objective,
                coupling=coupling,
                g=g_fun,
                jac_g=jac_g_fun,
                h=h_fun,
                jac_h=jac_h_fun,
                hess_lag=hess_fun,
            )
        )

    problem = PartitionedProblem(subsystems=specs, b=np.zeros(n_c), n_consensus=n_c)
    return problem, layout


@dataclass
class OpfComparison:
    available: bool
    f_reference: float
    f_solver: float
    relative_objective_error: float
    x_error_inf: float
    consensus_inf: float
    solver_status: str
    message: str = ""


def verify_against_oracle(
    case: GridCase,
    partition: RegionPartition,
    config: SolverConfig | None = None,
    linearized: bool = False,
) -> OpfComparison:
    """Solve the partitioned problem and compare with the unpartitioned oracle.

    The reference solves the same physics built as a single region (no
    consensus rows); boundary duplicates of the decentralized solution are
    averaged before the primal comparison.
    """
    config = config or SolverConfig()
    single_prob, single_layout = build_opf_subproblems(
        case, single_region_partition(case), linearized=linearized
    )
    oracle_cfg = config.replace(epsilon=min(config.epsilon, 1e-10))
    try:
        oracle = centralized_ip_solve(
            single_prob,
            config=oracle_cfg,
            start=default_start(single_prob, oracle_cfg, x0=single_layout.flat_start()),
        )
    except OracleFailure as exc:
        return OpfComparison(
            available=False,
            f_reference=float("nan"),
            f_solver=float("nan"),
            relative_objective_error=float("nan"),
            x_error_inf=float("nan"),
            consensus_inf=float("nan"),
            solver_status="not_run",
            message=f"oracle failure: {exc}",
        )

    problem, layout = build_opf_subproblems(case, partition, linearized=linearized)
    result = dip_solve(
        problem,
        start=default_start(problem, config, x0=layout.flat_start()),
        config=config,
    )
    x_ref = single_layout.case_x(oracle.x_parts)
    x_sol = layout.case_x([p.x for p in result.point.parts])
    f_ref = oracle.objective
    f_sol = result.objective
    last = result.trace.rows[-1] if result.trace.rows else None
    return OpfComparison(
        available=True,
        f_reference=f_ref,
        f_solver=f_sol,
        relative_objective_error=abs(f_sol - f_ref) / max(abs(f_ref), 1e-300),
        x_error_inf=float(np.max(np.abs(x_sol - x_ref))),
        consensus_inf=last.consensus_inf if last else 0.0,
        solver_status=result.status,
        message=result.message,
    )
