"""Centralized reference solver and the Schur positive-definiteness check.

The oracle applies the same barrier schedule, fraction-to-boundary rule and
termination logic as the decentralized solver but factors the fully
assembled Newton system in one piece, with no decomposition and no inexact
inner solve.  It certifies its answer against the unperturbed optimality
system and serves as the x* reference for distance traces and comparisons.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .dip import (
    ConvergenceTrace,
    SolverConfig,
    TraceRow,
    apply_update,
    barrier_update,
    default_start,
    fraction_to_boundary,
    problem_fingerprint,
)
from .localkkt import (
    SchurContribution,
    assemble_local_kkt,
    eval_barrier_residual,
    eval_residual_f0_blocks,
)
from .problem import (
    PartitionedProblem,
    PrimalDualPoint,
    SubsystemPoint,
    consensus_residual,
    validate_problem,
)

__all__ = [
    "OracleFailure",
    "OracleSolution",
    "SpdReport",
    "centralized_ip_solve",
    "eval_kkt_f0_norm",
    "schur_spd_check",
]


class OracleFailure(Exception):
    """The centralized reference solve did not converge."""


@dataclass
class OracleSolution:
    """Certified reference solution with activity information."""

    x_parts: list[np.ndarray]
    v_parts: list[np.ndarray]
    gamma_parts: list[np.ndarray]
    mu_parts: list[np.ndarray]
    lam: np.ndarray
    objective: float
    kkt_residual: float
    active: list[np.ndarray] = field(default_factory=list)          # per-subsystem bool masks
    strict_complementarity: list[np.ndarray] = field(default_factory=list)
    trace: ConvergenceTrace | None = None

    @property
    def point(self) -> PrimalDualPoint:
        parts = [
            SubsystemPoint(x.copy(), v.copy(), g.copy(), m.copy())
            for x, v, g, m in zip(self.x_parts, self.v_parts, self.gamma_parts, self.mu_parts)
        ]
        return PrimalDualPoint(parts=parts, lam=self.lam.copy())

    @property
    def x_stacked(self) -> np.ndarray:
        return np.concatenate(self.x_parts) if self.x_parts else np.zeros(0)


def eval_kkt_f0_norm(problem: PartitionedProblem, point: PrimalDualPoint) -> float:
    """Infinity norm of the unperturbed KKT system (complementarity as V mu)."""
    worst = 0.0
    for s, p in zip(problem.subsystems, point.parts):
        blocks = eval_residual_f0_blocks(s, p, point.lam)
        if blocks.size:
            worst = max(worst, float(np.max(np.abs(blocks))))
    cons = consensus_residual(problem, point)
    if cons.size:
        worst = max(worst, float(np.max(np.abs(cons))))
    return worst


def _solve_full_newton(problem, point, delta, residuals):
    """Assemble and solve the unreduced block system; returns per-subsystem
    steps plus the consensus multiplier step."""
    subs = problem.subsystems
    sizes = [s.dim + 2 * s.n_ineq + s.n_eq for s in subs]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    n_c = problem.n_consensus
    total = int(offsets[-1]) + n_c

    matrix = np.zeros((total, total))
    rhs = np.zeros(total)
    for i, s in enumerate(subs):
        o = int(offsets[i])
        kkt = assemble_local_kkt(s, point.parts[i], delta)
        matrix[o : o + sizes[i], o : o + sizes[i]] = kkt.matrix
        if n_c:
            a_dense = s.coupling.to_dense()
            matrix[o : o + s.dim, offsets[-1] :] = a_dense.T
            matrix[offsets[-1] :, o : o + s.dim] = a_dense
        rhs[o : o + sizes[i]] = -residuals[i]
    if n_c:
        rhs[offsets[-1] :] = -consensus_residual(problem, point)

    # Row/column equilibration before the LU, as in the local factorizations.
    r = np.max(np.abs(matrix), axis=1)
    r[r == 0.0] = 1.0
    scaled = matrix / r[:, None]
    c = np.max(np.abs(scaled), axis=0)
    c[c == 0.0] = 1.0
    scaled = scaled / c[None, :]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu, piv = sla.lu_factor(scaled)
    if not np.all(np.isfinite(lu)):
        raise OracleFailure("full Newton matrix is singular")
    step = sla.lu_solve((lu, piv), rhs / r) / c
    if not np.all(np.isfinite(step)):
        raise OracleFailure("full Newton solve produced non-finite step")

    parts = []
    for i, s in enumerate(subs):
        o = int(offsets[i])
        blk = step[o : o + sizes[i]]
        n, ng, nh = s.dim, s.n_eq, s.n_ineq
        parts.append(
            SubsystemPoint(
                x=blk[:n],
                v=blk[n : n + nh],
                gamma=blk[n + nh : n + nh + ng],
                mu=blk[n + nh + ng :],
            )
        )
    dlam = step[offsets[-1] :] if n_c else np.zeros(0)
    return PrimalDualPoint(parts=parts, lam=dlam)


def centralized_ip_solve(
    problem: PartitionedProblem,
    config: SolverConfig | None = None,
    start: PrimalDualPoint | None = None,
) -> OracleSolution:
    """Interior point solve of the assembled problem to oracle accuracy.

    Raises OracleFailure instead of returning a partial answer; callers that
    merely want a reference treat that as "reference unavailable".
    """
    config = config or SolverConfig(epsilon=1e-10)
    config.validate()
    report = validate_problem(problem)
    if not report.ok:
        raise OracleFailure("problem failed validation:\n" + "\n".join(report.violations))

    point = start.copy() if start is not None else default_start(problem, config)
    if not point.strictly_interior():
        raise OracleFailure("start point is not strictly interior")
    subs = problem.subsystems
    trace = ConvergenceTrace(solver="oracle", problem=problem_fingerprint(problem))
    delta = config.delta0
    factorizations = 0

    def residual_norm(pt, residuals):
        worst = max(
            (float(np.max(np.abs(r))) for r in residuals if r.size),
            default=0.0,
        )
        cons = consensus_residual(problem, pt)
        if cons.size:
            worst = max(worst, float(np.max(np.abs(cons))))
        return worst

    residuals = [
        eval_barrier_residual(s, point.parts[i], point.lam, delta) for i, s in enumerate(subs)
    ]
    kkt_inf = residual_norm(point, residuals)

    converged = False
    for k in range(1, config.max_outer + 1):
        if kkt_inf <= config.epsilon and delta <= 10.0 * config.delta_min:
            converged = True
            break
        step = _solve_full_newton(problem, point, delta, residuals)
        factorizations += 1
        alpha_p, alpha_d = fraction_to_boundary(
            [p.v for p in point.parts],
            [q.v for q in step.parts],
            [p.mu for p in point.parts],
            [q.mu for q in step.parts],
            delta,
            config,
        )
        delta_used = delta
        delta = barrier_update([p.v for p in point.parts], [p.mu for p in point.parts], config)
        point, _ = apply_update(point, step, alpha_p, alpha_d)
        residuals = [
            eval_barrier_residual(s, point.parts[i], point.lam, delta)
            for i, s in enumerate(subs)
        ]
        kkt_inf = residual_norm(point, residuals)
        cons = consensus_residual(problem, point)
        trace.rows.append(
            TraceRow(
                k=k,
                kkt_inf=kkt_inf,
                consensus_inf=float(np.max(np.abs(cons))) if cons.size else 0.0,
                delta=delta_used,
                alpha_p=alpha_p,
                alpha_d=alpha_d,
                inner_iters=0,
                inner_res=0.0,
                rho_reg=0.0,
                comm_global=0,
                comm_neighbor=0,
                dist_to_ref=None,
            )
        )
    else:
        if kkt_inf <= config.epsilon and delta <= 10.0 * config.delta_min:
            converged = True
    if not converged:
        raise OracleFailure(
            f"no convergence within {config.max_outer} iterations "
            f"(kkt_inf={kkt_inf:.3e}, delta={delta:.3e})"
        )

    f0 = eval_kkt_f0_norm(problem, point)
    active = [p.v < p.mu for p in point.parts]
    strict = [(p.v + p.mu) > 0.0 for p in point.parts]
    trace.meta["status"] = "converged"
    trace.meta["reference"] = "0"
    trace.meta["factorizations"] = str(factorizations)
    trace.meta["nlp_solves"] = "0"
    return OracleSolution(
        x_parts=[p.x.copy() for p in point.parts],
        v_parts=[p.v.copy() for p in point.parts],
        gamma_parts=[p.gamma.copy() for p in point.parts],
        mu_parts=[p.mu.copy() for p in point.parts],
        lam=point.lam.copy(),
        objective=problem.objective([p.x for p in point.parts]),
        kkt_residual=f0,
        active=active,
        strict_complementarity=strict,
        trace=trace,
    )


@dataclass
class SpdReport:
    is_spd: bool
    min_eigenvalue: float
    matrix_norm: float


def schur_spd_check(contributions: list[SchurContribution]) -> SpdReport:
    """Assemble S = sum_i S_i and test positive definiteness.

    Regular problem data (positive-definite reduced curvature, independent
    constraint gradients) guarantees S is positive definite; rank-deficient
    coupling shows up here as a (numerically) nonpositive eigenvalue.
    """
    if not contributions:
        return SpdReport(is_spd=True, min_eigenvalue=float("inf"), matrix_norm=0.0)
    total = np.zeros_like(contributions[0].schur)
    for c in contributions:
        total += c.schur
    if total.size == 0:
        return SpdReport(is_spd=True, min_eigenvalue=float("inf"), matrix_norm=0.0)
    sym = 0.5 * (total + total.T)
    eigs = np.linalg.eigvalsh(sym)
    norm = float(np.max(np.abs(eigs)))
    min_eig = float(eigs[0])
    return SpdReport(is_spd=min_eig > 1e-10 * norm, min_eigenvalue=min_eig, matrix_norm=norm)
