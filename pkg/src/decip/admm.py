"""Consensus ADMM baseline with scaled duals and a fixed penalty.

The coupling constraint sum_i A_i x_i = b is split with per-subsystem
auxiliary shares y_i (supported on the subsystem's consensus rows): each
iteration solves one augmented local NLP per subsystem (via the centralized
interior point machinery), projects the shares back onto the coupling
hyperplane (a neighbor-averaging step: each consensus row is corrected by
the row sum over its owners divided by the owner count), and updates the
scaled duals.  The scaled duals of a shared row coincide across its owners,
so rho * u is the consensus multiplier estimate.

Per iteration the only inter-subsystem traffic is one overlap exchange
(phase ``admm_iterate``); convergence-check reductions are booked separately
under ``admm_check`` since plain ADMM needs no global communication at all.
No convergence guarantee is claimed on non-convex instances; the trace
reports whatever happened.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dcg import build_projections, exchange_overlap_sums
from .dip import (
    ConvergenceTrace,
    SolverConfig,
    TraceRow,
    default_start,
    problem_fingerprint,
    _reference_parts,
)
from .localkkt import eval_residual_f0_blocks
from .netsim import Network
from .oracle import OracleFailure, centralized_ip_solve
from .problem import (
    PartitionedProblem,
    PrimalDualPoint,
    RowSparseMatrix,
    SubsystemPoint,
    SubsystemSpec,
    build_topology,
    validate_problem,
)

__all__ = ["AdmmConfig", "AdmmResult", "admm_solve"]

ADMM_CONVERGED = "converged"
ADMM_MAX_ITER = "max_iter"


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 1.0
    max_iter: int = 500
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    local: SolverConfig = field(default_factory=lambda: SolverConfig(epsilon=1e-10))

    def validate(self) -> None:
        if not self.rho > 0.0:
            raise ValueError("rho > 0 required")
        if self.max_iter < 1:
            raise ValueError("max_iter >= 1 required")
        self.local.validate()


@dataclass
class AdmmResult:
    status: str
    point: PrimalDualPoint
    trace: ConvergenceTrace
    comm: object = None
    counters: dict[str, int] = field(default_factory=dict)
    objective: float = float("nan")
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == ADMM_CONVERGED


def _augmented_subproblem(
    spec: SubsystemSpec, a_hat: np.ndarray, w: np.ndarray, rho: float
) -> PartitionedProblem:
    """Local NLP with the penalty (rho/2)||A_hat x - w||^2 added to f."""
    quad = rho * (a_hat.T @ a_hat)

    def f(x):
        r = a_hat @ x - w
        return float(spec.f(x)) + 0.5 * rho * float(r @ r)

    def grad_f(x):
        return np.asarray(spec.grad_f(x), dtype=float) + rho * (a_hat.T @ (a_hat @ x - w))

    def hess_lag(x, gamma, mu):
        return spec.eval_hess_lag(x, gamma, mu) + quad

    aug = SubsystemSpec(
        index=0,
        dim=spec.dim,
        n_eq=spec.n_eq,
        n_ineq=spec.n_ineq,
        f=f,
        grad_f=grad_f,
        coupling=RowSparseMatrix((0, spec.dim)),
        g=spec.g,
        jac_g=spec.jac_g,
        h=spec.h,
        jac_h=spec.jac_h,
        hess_lag=hess_lag,
    )
    return PartitionedProblem(subsystems=[aug], b=np.zeros(0), n_consensus=0)


def admm_solve(
    problem: PartitionedProblem,
    config: AdmmConfig | None = None,
    x0: list[np.ndarray] | None = None,
    reference=None,
) -> AdmmResult:
    """Run consensus ADMM; local NLP failures keep the previous local point.

    The returned point carries the last local primal/dual blocks and the
    consensus multiplier estimate rho * u.
    """
    config = config or AdmmConfig()
    config.validate()
    report = validate_problem(problem)
    if not report.ok:
        raise ValueError("problem failed validation:\n" + "\n".join(report.violations))

    subs = problem.subsystems
    n_sub = problem.n_sub
    topo = build_topology(problem)
    proj = build_projections(topo)
    net = Network.from_topology(topo)
    rows = topo.consensus_sets
    counts = proj.counts
    b_hat = [problem.b[r] for r in rows]
    rho = config.rho
    ref_parts = _reference_parts(problem, reference)

    x = [np.asarray(x0[i], dtype=float).copy() if x0 else np.zeros(s.dim) for i, s in enumerate(subs)]
    parts = [
        SubsystemPoint(x=x[i], v=np.zeros(s.n_ineq), gamma=np.zeros(s.n_eq), mu=np.zeros(s.n_ineq))
        for i, s in enumerate(subs)
    ]
    u = [np.zeros(len(r)) for r in rows]

    # Feasible initial shares: project the initial coupling images onto the
    # consensus hyperplane.
    net.set_phase("admm_init")
    a_hats = [s.coupling.submatrix(rows[i]) for i, s in enumerate(subs)]
    c = [a_hats[i] @ x[i] for i in range(n_sub)]
    sums = exchange_overlap_sums(c, proj, net)
    y = [c[i] - (sums[i] - b_hat[i]) / counts[i] for i in range(n_sub)]

    trace = ConvergenceTrace(solver="admm", problem=problem_fingerprint(problem))
    counters = {"nlp_solves": 0, "nlp_failures": 0, "local_ip_iterations": 0}
    status = ADMM_MAX_ITER
    message = ""

    for k in range(1, config.max_iter + 1):
        # Local augmented NLP solves (parallel across subsystems).
        local_iters = 0
        local_res = 0.0
        for i, s in enumerate(subs):
            w = y[i] - u[i]
            local = _augmented_subproblem(s, a_hats[i], w, rho)
            counters["nlp_solves"] += 1
            try:
                # warm-start the primal block at the current local iterate
                sol = centralized_ip_solve(
                    local,
                    config=config.local,
                    start=default_start(local, config.local, x0=[x[i]]),
                )
            except (OracleFailure, ValueError) as exc:
                counters["nlp_failures"] += 1
                message = f"subsystem {i} local solve failed at iteration {k}: {exc}"
                continue  # keep previous local solution
            x[i] = sol.x_parts[0]
            parts[i] = SubsystemPoint(
                x=x[i].copy(),
                v=sol.v_parts[0],
                gamma=sol.gamma_parts[0],
                mu=sol.mu_parts[0],
            )
            local_iters += sol.trace.outer_iterations if sol.trace else 0
            local_res = max(local_res, sol.kkt_residual)
        counters["local_ip_iterations"] += local_iters

        # Share projection (neighbor averaging) and scaled dual update.
        net.set_phase("admm_iterate")
        c = [a_hats[i] @ x[i] + u[i] for i in range(n_sub)]
        sums = exchange_overlap_sums(c, proj, net)
        y_prev = y
        correction = [(sums[i] - b_hat[i]) / counts[i] for i in range(n_sub)]
        y = [c[i] - correction[i] for i in range(n_sub)]
        primal_local = {}
        dual_local = {}
        for i in range(n_sub):
            # row sums minus the duplicated duals recover sum_j A_j x_j - b
            resid = sums[i] - counts[i] * u[i] - b_hat[i]
            primal_local[i] = float(np.max(np.abs(resid))) if resid.size else 0.0
            dy = y[i] - y_prev[i]
            dual_local[i] = rho * float(np.max(np.abs(dy))) if dy.size else 0.0
        u = correction  # u_new = u + A_hat x - y, which telescopes to the correction

        net.set_phase("admm_check")
        primal_inf = net.global_scalar_reduce(primal_local, op="max")
        dual_inf = net.global_scalar_reduce(dual_local, op="max")
        lam_full = np.zeros(problem.n_consensus)
        for i in range(n_sub - 1, -1, -1):
            lam_full[rows[i]] = rho * u[i]
        kkt_local = {}
        for i, s in enumerate(subs):
            blocks = eval_residual_f0_blocks(s, parts[i], lam_full)
            kkt_local[i] = float(np.max(np.abs(blocks))) if blocks.size else 0.0
            kkt_local[i] = max(kkt_local[i], primal_local[i])
        kkt_inf = net.global_scalar_reduce(kkt_local, op="max")
        dist = None
        if ref_parts is not None:
            d_local = {
                i: float(np.max(np.abs(x[i] - ref_parts[i]))) if x[i].size else 0.0
                for i in range(n_sub)
            }
            dist = net.global_scalar_reduce(d_local, op="max")

        agg = net.stats.aggregate()
        trace.rows.append(
            TraceRow(
                k=k,
                kkt_inf=kkt_inf,
                consensus_inf=primal_inf,
                delta=float("nan"),
                alpha_p=float("nan"),
                alpha_d=float("nan"),
                inner_iters=local_iters,
                inner_res=local_res,
                rho_reg=rho,
                comm_global=agg.reduction_scalars,
                comm_neighbor=agg.neighbor_scalars,
                dist_to_ref=dist,
            )
        )
        if primal_inf <= config.tol_primal and dual_inf <= config.tol_dual:
            status = ADMM_CONVERGED
            break

    lam_full = np.zeros(problem.n_consensus)
    for i in range(n_sub - 1, -1, -1):
        lam_full[rows[i]] = rho * u[i]
    point = PrimalDualPoint(parts=[p.copy() for p in parts], lam=lam_full)
    trace.meta["status"] = status
    trace.meta["reference"] = "1" if ref_parts is not None else "0"
    trace.meta["factorizations"] = "0"
    trace.meta["nlp_solves"] = str(counters["nlp_solves"])
    return AdmmResult(
        status=status,
        point=point,
        trace=trace,
        comm=net.stats,
        counters=counters,
        objective=problem.objective(x),
        message=message,
    )
