"""Decentralized primal-dual interior point outer loop.

Each outer iteration follows the same choreography: every subsystem
assembles and factorizes its local Newton matrix once, forms its Schur
contribution, the decentralized CG inner solver produces the consensus
multiplier step to the barrier-dependent tolerance ``c1 * delta**eta``, the
local steps are back-substituted, and the barrier parameter and
fraction-to-boundary stepsizes are agreed on via exactly three global scalar
reductions (the max over local barrier proposals and the min over local
primal/dual stepsize caps).  Termination measures the perturbed KKT residual
in the infinity norm with the current barrier parameter and additionally
requires the barrier parameter to have reached its floor, so convergence
certifies the original (delta -> 0) optimality system.

Communication phases: ``dip_outer`` carries exactly the three reductions per
iteration; all termination/diagnostic traffic (the consensus-residual
neighbor exchange plus the residual/consensus/distance max-reductions) is
booked under ``dip_check``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import localkkt
from .dcg import build_projections, dcg_solve, exchange_overlap_sums
from .localkkt import (
    SubsystemFactorizationError,
    assemble_local_kkt,
    compute_schur_contribution,
    eval_barrier_residual,
    factorize_local_kkt,
    recover_local_step,
    split_step,
)
from .netsim import Network
from .problem import (
    PartitionedProblem,
    PrimalDualPoint,
    SubsystemPoint,
    build_topology,
    validate_problem,
)

__all__ = [
    "ConfigError",
    "SolverConfig",
    "TraceRow",
    "ConvergenceTrace",
    "OuterResult",
    "RateReport",
    "STATUS_CONVERGED",
    "STATUS_MAX_OUTER",
    "STATUS_SUBSYSTEM_FAILURE",
    "STATUS_STALL",
    "barrier_term",
    "barrier_update",
    "fraction_to_boundary",
    "apply_update",
    "default_start",
    "dip_solve",
    "rate_diagnostic",
    "problem_fingerprint",
]

STATUS_CONVERGED = "converged"
STATUS_MAX_OUTER = "max_outer"
STATUS_SUBSYSTEM_FAILURE = "subsystem_failure"
STATUS_STALL = "inner_truncated_stall"

INTERIOR_FLOOR = 1e-16


class ConfigError(ValueError):
    """A solver parameter violates its contract; the message names it."""


@dataclass(frozen=True)
class SolverConfig:
    """Outer-loop parameters.

    Defaults follow the reference parameterization
    (c1, theta, gamma, beta, eta) = (1, 0.1, 0.01, 2, 1.01); epsilon,
    delta0, delta_min and the iteration caps are artifact choices sized for
    desk-scale problems.
    """

    c1: float = 1.0
    theta: float = 0.1
    gamma: float = 0.01
    beta: float = 2.0
    eta: float = 1.01
    epsilon: float = 1e-8
    delta0: float = 0.1
    delta_min: float = 1e-12
    max_outer: int = 100
    max_inner: int | None = None  # None -> 10 * n_consensus

    def validate(self) -> None:
        if not self.eta > 1.0:
            raise ConfigError("eta > 1 required")
        if not self.beta > self.gamma:
            raise ConfigError("beta > gamma required")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError("theta in (0, 1] required")
        if not self.gamma > 0.0:
            raise ConfigError("gamma > 0 required")
        if not self.delta0 > 0.0:
            raise ConfigError("delta0 > 0 required")
        if not self.delta_min > 0.0:
            raise ConfigError("delta_min > 0 required")
        if not self.c1 > 0.0:
            raise ConfigError("c1 > 0 required")
        if not self.epsilon > 0.0:
            raise ConfigError("epsilon > 0 required")
        if self.max_outer < 1:
            raise ConfigError("max_outer >= 1 required")
        if self.max_inner is not None and self.max_inner < 1:
            raise ConfigError("max_inner >= 1 required")

    def replace(self, **kw) -> "SolverConfig":
        from dataclasses import replace

        cfg = replace(self, **kw)
        cfg.validate()
        return cfg


@dataclass
class TraceRow:
    """Post-step snapshot of one outer iteration."""

    k: int
    kkt_inf: float
    consensus_inf: float
    delta: float
    alpha_p: float
    alpha_d: float
    inner_iters: int
    inner_res: float
    rho_reg: float
    comm_global: int
    comm_neighbor: int
    dist_to_ref: float | None = None


@dataclass
class ConvergenceTrace:
    """Append-only per-iteration record plus run-level metadata."""

    solver: str
    problem: str
    rows: list[TraceRow] = field(default_factory=list)
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def outer_iterations(self) -> int:
        return len(self.rows)

    @property
    def total_inner_iterations(self) -> int:
        return sum(r.inner_iters for r in self.rows)


@dataclass
class OuterResult:
    status: str
    point: PrimalDualPoint
    trace: ConvergenceTrace
    comm: object = None  # CommStats
    counters: dict[str, int] = field(default_factory=dict)
    objective: float = float("nan")
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == STATUS_CONVERGED


def problem_fingerprint(problem: PartitionedProblem) -> str:
    """Deterministic content hash used to refuse cross-problem comparisons."""
    h = hashlib.sha256()
    h.update(f"{problem.n_sub},{problem.n_consensus};".encode())
    h.update(np.ascontiguousarray(problem.b).tobytes())
    for s in problem.subsystems:
        h.update(f"|{s.index},{s.dim},{s.n_eq},{s.n_ineq}".encode())
        h.update(np.ascontiguousarray(s.coupling.to_dense()).tobytes())
        for x in (np.zeros(s.dim), np.linspace(0.1, 0.7, s.dim)):
            h.update(np.float64(s.f(x)).tobytes())
            h.update(np.ascontiguousarray(s.eval_g(x)).tobytes())
            h.update(np.ascontiguousarray(s.eval_h(x)).tobytes())
    return h.hexdigest()[:16]


def barrier_term(v: np.ndarray, mu: np.ndarray, theta: float, gamma: float) -> float:
    """Local barrier proposal theta * (v.mu / n_h)^(1+gamma); 0 without inequalities."""
    n_h = v.size
    if n_h == 0:
        return 0.0
    return float(theta * (float(v @ mu) / n_h) ** (1.0 + gamma))


def barrier_update(
    v: Sequence[np.ndarray], mu: Sequence[np.ndarray], config: SolverConfig
) -> float:
    """Next barrier parameter: max over local proposals, floored at delta_min.

    With no inequality constraints anywhere every proposal is zero and the
    barrier drops straight to the floor (the method degenerates to Newton).
    """
    best = max(barrier_term(vi, mi, config.theta, config.gamma) for vi, mi in zip(v, mu))
    return max(best, config.delta_min)


def _stepsize_cap(vals: np.ndarray, step: np.ndarray, tau: float) -> float:
    """Fraction-to-boundary cap min(tau * min(-vals/step | step<0), 1)."""
    neg = step < 0.0
    if not np.any(neg):
        return 1.0
    return float(min(tau * np.min(-vals[neg] / step[neg]), 1.0))


def fraction_to_boundary(
    v: Sequence[np.ndarray],
    dv: Sequence[np.ndarray],
    mu: Sequence[np.ndarray],
    dmu: Sequence[np.ndarray],
    delta: float,
    config: SolverConfig,
) -> tuple[float, float]:
    """Primal/dual stepsizes keeping v and mu strictly positive.

    tau = 1 - delta**beta; the aggregate is the min over subsystems.
    """
    tau = max(1.0 - delta**config.beta, 0.0)
    alpha_p = min(_stepsize_cap(vi, dvi, tau) for vi, dvi in zip(v, dv))
    alpha_d = min(_stepsize_cap(mi, dmi, tau) for mi, dmi in zip(mu, dmu))
    return alpha_p, alpha_d


def _apply_part(
    part: SubsystemPoint, step: SubsystemPoint, alpha_p: float, alpha_d: float
) -> tuple[SubsystemPoint, int]:
    """Step one subsystem block; clip any numerically lost interiority."""
    v = part.v + alpha_p * step.v
    mu = part.mu + alpha_d * step.mu
    clipped = int(np.count_nonzero(v <= 0.0) + np.count_nonzero(mu <= 0.0))
    if clipped:
        v = np.maximum(v, INTERIOR_FLOOR)
        mu = np.maximum(mu, INTERIOR_FLOOR)
    return (
        SubsystemPoint(
            x=part.x + alpha_p * step.x,
            v=v,
            gamma=part.gamma + alpha_d * step.gamma,
            mu=mu,
        ),
        clipped,
    )


def apply_update(
    point: PrimalDualPoint,
    step: PrimalDualPoint,
    alpha_p: float,
    alpha_d: float,
) -> tuple[PrimalDualPoint, int]:
    """Primal blocks (x, v) move by alpha_p, dual blocks (gamma, mu, lambda)
    by alpha_d.  Returns the new point and the count of clipped components."""
    parts = []
    clipped = 0
    for part, dpart in zip(point.parts, step.parts):
        new_part, c = _apply_part(part, dpart, alpha_p, alpha_d)
        parts.append(new_part)
        clipped += c
    return PrimalDualPoint(parts=parts, lam=point.lam + alpha_d * step.lam), clipped


def default_start(
    problem: PartitionedProblem,
    config: SolverConfig,
    x0: Sequence[np.ndarray] | None = None,
) -> PrimalDualPoint:
    """Strictly interior start: exact slacks floored at 1e-2, mu = delta0/v.

    The multiplier choice places the barrier row exactly at zero for the
    initial barrier parameter.  gamma and lambda start at zero.
    """
    parts = []
    for i, s in enumerate(problem.subsystems):
        x = np.asarray(x0[i], dtype=float).copy() if x0 is not None else np.zeros(s.dim)
        if s.n_ineq:
            v = np.maximum(-s.eval_h(x), 1e-2)
            mu = config.delta0 / v
        else:
            v = np.zeros(0)
            mu = np.zeros(0)
        parts.append(SubsystemPoint(x=x, v=v, gamma=np.zeros(s.n_eq), mu=mu))
    return PrimalDualPoint(parts=parts, lam=np.zeros(problem.n_consensus))


def _reference_parts(problem: PartitionedProblem, reference) -> list[np.ndarray] | None:
    """Accept an oracle solution (x_parts attribute), a list of per-subsystem
    arrays, or one stacked vector."""
    if reference is None:
        return None
    if hasattr(reference, "x_parts"):
        return [np.asarray(x, dtype=float) for x in reference.x_parts]
    if isinstance(reference, (list, tuple)):
        return [np.asarray(x, dtype=float) for x in reference]
    stacked = np.asarray(reference, dtype=float).reshape(-1)
    parts = []
    off = 0
    for s in problem.subsystems:
        parts.append(stacked[off : off + s.dim].copy())
        off += s.dim
    if off != stacked.size:
        raise ValueError(f"reference has {stacked.size} entries, problem expects {off}")
    return parts


class _Agents:
    """Per-subsystem state plus the decentralized evaluation rounds.

    Subsystem-local data (iterate blocks, multiplier segments, factorization
    handles) lives in per-index slots; everything crossing slots goes through
    the Network.
    """

    def __init__(self, problem, topo, proj, net, point, config):
        self.problem = problem
        self.proj = proj
        self.net = net
        self.config = config
        self.parts = [p.copy() for p in point.parts]
        self.lam_segs = [
            point.lam[rows].copy() for rows in topo.consensus_sets
        ]
        self.rows = topo.consensus_sets
        self.n_c = problem.n_consensus

    def lam_full(self, i: int) -> np.ndarray:
        """Scatter subsystem i's multiplier segment to consensus length.

        Rows outside C_i multiply zero coupling rows, so zeros are exact."""
        full = np.zeros(self.n_c)
        full[self.rows[i]] = self.lam_segs[i]
        return full

    def assembled_lam(self) -> np.ndarray:
        full = np.zeros(self.n_c)
        for i in range(self.problem.n_sub - 1, -1, -1):
            full[self.rows[i]] = self.lam_segs[i]
        return full

    def point(self) -> PrimalDualPoint:
        return PrimalDualPoint(parts=[p.copy() for p in self.parts], lam=self.assembled_lam())

    def evaluate(self, delta: float, ref_parts) -> tuple[float, float, float | None, list]:
        """Residual/consensus/distance norms via one dip_check round.

        One neighbor exchange assembles the consensus rows (each owner ends
        up with the identical full row sums); two or three max-reductions
        agree on the norms.
        """
        subs = self.problem.subsystems
        self.net.set_phase("dip_check")
        residuals = [
            eval_barrier_residual(s, self.parts[i], self.lam_full(i), delta)
            for i, s in enumerate(subs)
        ]
        own = [
            s.coupling.submatrix(self.rows[i]) @ self.parts[i].x for i, s in enumerate(subs)
        ]
        sums = exchange_overlap_sums(own, self.proj, self.net)
        cons = [sums[i] - self.problem.b[self.rows[i]] for i in range(len(subs))]
        cons_norm = {
            i: float(np.max(np.abs(cons[i]))) if cons[i].size else 0.0 for i in range(len(subs))
        }
        kkt_local = {
            i: max(
                float(np.max(np.abs(residuals[i]))) if residuals[i].size else 0.0,
                cons_norm[i],
            )
            for i in range(len(subs))
        }
        kkt_inf = self.net.global_scalar_reduce(kkt_local, op="max")
        cons_inf = self.net.global_scalar_reduce(cons_norm, op="max")
        dist = None
        if ref_parts is not None:
            local = {
                i: float(np.max(np.abs(self.parts[i].x - ref_parts[i])))
                if ref_parts[i].size
                else 0.0
                for i in range(len(subs))
            }
            dist = self.net.global_scalar_reduce(local, op="max")
        return kkt_inf, cons_inf, dist, residuals


def dip_solve(
    problem: PartitionedProblem,
    start: PrimalDualPoint | None = None,
    config: SolverConfig | None = None,
    reference=None,
    iterate_callback: Callable[[int, PrimalDualPoint], None] | None = None,
) -> OuterResult:
    """Run the decentralized interior point method on a validated problem.

    ``reference`` (an oracle solution or a primal vector) enables the
    distance-to-reference trace column.  ``iterate_callback(k, point)`` is
    invoked after every accepted iterate; it sees a copy.
    """
    config = config or SolverConfig()
    config.validate()
    report = validate_problem(problem)
    if not report.ok:
        raise ValueError("problem failed validation:\n" + "\n".join(report.violations))

    topo = build_topology(problem)
    proj = build_projections(topo)
    net = Network.from_topology(topo)
    point = start if start is not None else default_start(problem, config)
    if not point.strictly_interior():
        raise ValueError("start point is not strictly interior (v, mu > 0 required)")

    subs = problem.subsystems
    n_sub = problem.n_sub
    n_c = problem.n_consensus
    max_inner = config.max_inner if config.max_inner is not None else max(10 * n_c, 1)
    ref_parts = _reference_parts(problem, reference)

    agents = _Agents(problem, topo, proj, net, point, config)
    trace = ConvergenceTrace(solver="dip", problem=problem_fingerprint(problem))
    counters = {"factorizations": 0, "interior_clips": 0, "truncated_inner_solves": 0}

    delta = config.delta0
    status = STATUS_MAX_OUTER
    message = ""
    kkt_inf, cons_inf, dist, residuals = agents.evaluate(delta, ref_parts)
    trunc_streak = 0

    for k in range(1, config.max_outer + 1):
        if kkt_inf <= config.epsilon and delta <= 10.0 * config.delta_min:
            status = STATUS_CONVERGED
            break

        # Local Newton systems: one factorization per subsystem per iteration.
        facts = []
        contribs = []
        rho_max = 0.0
        try:
            for i, s in enumerate(subs):
                kkt = assemble_local_kkt(s, agents.parts[i], delta)
                fact = factorize_local_kkt(kkt)
                counters["factorizations"] += fact.attempts
                rho_max = max(rho_max, fact.rho)
                facts.append(fact)
                contribs.append(
                    compute_schur_contribution(
                        s, fact, agents.parts[i], agents.lam_full(i), delta,
                        problem.b, n_sub, residual=residuals[i],
                    )
                )
        except SubsystemFactorizationError as exc:
            status = STATUS_SUBSYSTEM_FAILURE
            message = str(exc)
            break

        # Inner solve for the consensus multiplier step.
        if n_c:
            inner_tol = config.c1 * delta**config.eta
            inner = dcg_solve(
                contribs,
                [np.zeros(len(r)) for r in agents.rows],
                proj,
                inner_tol,
                max_inner,
                net,
            )
            dlam_segs = inner.lam
            inner_iters, inner_res = inner.iterations, inner.final_residual
            truncated = inner.truncated
        else:
            dlam_segs = [np.zeros(0) for _ in subs]
            inner_iters, inner_res, truncated = 0, 0.0, False
        if truncated:
            counters["truncated_inner_solves"] += 1

        # Back-substitution and local stepsize/barrier proposals.
        steps = []
        for i, s in enumerate(subs):
            dlam_full = np.zeros(n_c)
            dlam_full[agents.rows[i]] = dlam_segs[i]
            dp = recover_local_step(s, facts[i], residuals[i], dlam_full)
            steps.append(split_step(s, dp))
        tau = max(1.0 - delta**config.beta, 0.0)
        alpha_p_prop = {
            i: _stepsize_cap(agents.parts[i].v, steps[i].v, tau) for i in range(n_sub)
        }
        alpha_d_prop = {
            i: _stepsize_cap(agents.parts[i].mu, steps[i].mu, tau) for i in range(n_sub)
        }

        # Two of the three per-iteration scalars: primal and dual stepsize mins.
        net.set_phase("dip_outer")
        alpha_p = net.global_scalar_reduce(alpha_p_prop, op="min")
        alpha_d = net.global_scalar_reduce(alpha_d_prop, op="min")

        # Local update of every block; lambda steps with the dual stepsize.
        for i in range(n_sub):
            new_part, clipped = _apply_part(agents.parts[i], steps[i], alpha_p, alpha_d)
            agents.parts[i] = new_part
            counters["interior_clips"] += clipped
            agents.lam_segs[i] = agents.lam_segs[i] + alpha_d * dlam_segs[i]

        # Third scalar: the next barrier parameter, proposed from the updated
        # iterate so the following Newton system targets the barrier solution
        # branch belonging to the point it actually starts from.
        delta_prop = {
            i: barrier_term(agents.parts[i].v, agents.parts[i].mu, config.theta, config.gamma)
            for i in range(n_sub)
        }
        delta_next = max(net.global_scalar_reduce(delta_prop, op="max"), config.delta_min)

        delta_used = delta
        delta = delta_next
        prev_kkt = kkt_inf
        kkt_inf, cons_inf, dist, residuals = agents.evaluate(delta, ref_parts)

        agg = net.stats.aggregate()
        trace.rows.append(
            TraceRow(
                k=k,
                kkt_inf=kkt_inf,
                consensus_inf=cons_inf,
                delta=delta_used,
                alpha_p=alpha_p,
                alpha_d=alpha_d,
                inner_iters=inner_iters,
                inner_res=inner_res,
                rho_reg=rho_max,
                comm_global=agg.reduction_scalars,
                comm_neighbor=agg.neighbor_scalars,
                dist_to_ref=dist,
            )
        )
        if iterate_callback is not None:
            iterate_callback(k, agents.point())

        if truncated:
            trunc_streak += 1
            if trunc_streak >= 2 and kkt_inf >= prev_kkt:
                status = STATUS_STALL
                message = (
                    f"inner solver truncated {trunc_streak} consecutive iterations "
                    f"with no outer progress"
                )
                break
        else:
            trunc_streak = 0
    else:
        # Loop exhausted: the final iterate may still satisfy the exit test.
        if kkt_inf <= config.epsilon and delta <= 10.0 * config.delta_min:
            status = STATUS_CONVERGED
        else:
            status = STATUS_MAX_OUTER

    final = agents.point()
    result = OuterResult(
        status=status,
        point=final,
        trace=trace,
        comm=net.stats,
        counters=counters,
        objective=problem.objective([p.x for p in final.parts]),
        message=message,
    )
    trace.meta["status"] = status
    trace.meta["reference"] = "1" if ref_parts is not None else "0"
    trace.meta["factorizations"] = str(counters["factorizations"])
    trace.meta["nlp_solves"] = "0"
    return result


@dataclass
class RateReport:
    in_local_regime: bool
    superlinear_consistent: bool
    tail_length: int
    ratios: list[float]
    message: str


def rate_diagnostic(trace: ConvergenceTrace, reference) -> RateReport:
    """Empirical local-rate check over the trailing full-step iterations.

    Requires at least 4 trailing rows with alpha_p = alpha_d = 1 and the
    distance-to-reference column.  Flags "superlinear-consistent" when the
    error ratios e_{k+1}/e_k over that tail are strictly decreasing and the
    last one is below 0.5.  Errors at the numerical noise floor (relative to
    the reference scale) terminate the ratio sequence as an exact collapse.
    """
    if hasattr(reference, "x_parts"):
        scale = max(float(np.max(np.abs(np.concatenate(reference.x_parts)))), 1.0)
    else:
        scale = max(float(np.max(np.abs(np.asarray(reference, dtype=float)))), 1.0)
    floor = 1e-13 * scale

    tail: list[TraceRow] = []
    for row in reversed(trace.rows):
        if row.alpha_p == 1.0 and row.alpha_d == 1.0:
            tail.append(row)
        else:
            break
    tail.reverse()
    if len(tail) < 4:
        return RateReport(
            in_local_regime=False,
            superlinear_consistent=False,
            tail_length=len(tail),
            ratios=[],
            message=f"not in local regime: only {len(tail)} trailing full-step iterations",
        )
    errors = [row.dist_to_ref for row in tail]
    if any(e is None for e in errors):
        return RateReport(
            in_local_regime=False,
            superlinear_consistent=False,
            tail_length=len(tail),
            ratios=[],
            message="no reference distances recorded in trace",
        )

    ratios: list[float] = []
    for e_k, e_next in zip(errors, errors[1:]):
        if e_k <= floor:
            break  # already at the noise floor; nothing left to measure
        if e_next <= floor:
            ratios.append(0.0)  # collapse to (numerical) zero
            break
        ratios.append(e_next / e_k)

    strictly_decreasing = all(b < a for a, b in zip(ratios, ratios[1:]))
    ok = len(ratios) >= 2 and strictly_decreasing and ratios[-1] < 0.5
    return RateReport(
        in_local_regime=True,
        superlinear_consistent=ok,
        tail_length=len(tail),
        ratios=ratios,
        message="superlinear-consistent" if ok else "full-step tail without superlinear signature",
    )
