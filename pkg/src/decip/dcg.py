"""Decentralized conjugate gradient solver for the consensus-step system.

Solves ``(sum_i S_i) dlam = sum_i s_i`` using only, per iteration, one
neighbor-to-neighbor exchange of overlapping vector segments and two global
scalar sums (for the curvature sigma and the weighted residual energy eta).
Each subsystem stores just its consensus rows C_i; rows shared between
subsystems are stored redundantly and the diagonal averaging weights
``counts`` (how many subsystems own each row) make the duplicated storage
transparent: the weighted local energies sum exactly to the global r^T r, so
the stacked iteration reproduces centralized CG on the assembled system.

Neighbor sums accumulate in ascending subsystem order at every owner, which
keeps the duplicated entries of shared rows bitwise identical across owners.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netsim import Network
from .problem import CouplingTopology

__all__ = [
    "SchurNotPositiveDefinite",
    "InconsistentInitialState",
    "ProjectionMap",
    "DcgState",
    "DcgResult",
    "build_projections",
    "exchange_overlap_sums",
    "dcg_init",
    "dcg_iterate",
    "dcg_solve",
]


class SchurNotPositiveDefinite(Exception):
    """Nonpositive curvature in the Schur system; the positive-definiteness

    property that regular problem data guarantees does not hold here."""


class InconsistentInitialState(Exception):
    """Shared consensus rows disagree in the initial multiplier segments."""


@dataclass
class ProjectionMap:
    """Selection/averaging structure derived from the coupling topology.

    ``overlaps[(i, j)]`` holds, for neighbors i != j, the positions of the
    shared consensus rows in i's and j's local orderings; ``counts[i]`` is
    the diagonal of the averaging matrix for subsystem i (global owner count
    of each of its rows, always >= 1).
    """

    consensus_sets: list[np.ndarray]
    neighbor_sets: list[np.ndarray]
    overlaps: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]]
    counts: list[np.ndarray]

    @property
    def n_sub(self) -> int:
        return len(self.consensus_sets)


def build_projections(topology: CouplingTopology) -> ProjectionMap:
    """Precompute overlap index maps and row-ownership counts."""
    sets = topology.consensus_sets
    n_sub = len(sets)
    owner_count: dict[int, int] = {}
    for rows in sets:
        for r in rows.tolist():
            owner_count[r] = owner_count.get(r, 0) + 1
    counts = [np.array([owner_count[r] for r in rows.tolist()], dtype=float) for rows in sets]

    overlaps: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    for i in range(n_sub):
        for j in topology.neighbor_sets[i].tolist():
            if j == i:
                continue
            shared = np.intersect1d(sets[i], sets[j], assume_unique=True)
            if shared.size:
                pos_i = np.searchsorted(sets[i], shared)
                pos_j = np.searchsorted(sets[j], shared)
                overlaps[(i, j)] = (pos_i, pos_j)
    return ProjectionMap(
        consensus_sets=[s.copy() for s in sets],
        neighbor_sets=[n.copy() for n in topology.neighbor_sets],
        overlaps=overlaps,
        counts=counts,
    )


@dataclass
class DcgState:
    """Per-subsystem CG vectors and the two shared scalars."""

    lam: list[np.ndarray]
    r: list[np.ndarray]
    p: list[np.ndarray]
    u: list[np.ndarray]
    sigma_i: np.ndarray
    eta_i: np.ndarray
    eta: float
    sigma: float = 0.0
    n: int = 0


@dataclass
class DcgResult:
    lam: list[np.ndarray]
    iterations: int
    residual_norms: list[float] = field(default_factory=list)
    truncated: bool = False

    @property
    def final_residual(self) -> float:
        return self.residual_norms[-1] if self.residual_norms else 0.0


def exchange_overlap_sums(
    vectors: list[np.ndarray], proj: ProjectionMap, net: Network
) -> list[np.ndarray]:
    """One neighbor round: every subsystem receives sum_{j in N_i} I_ij v_j.

    The self term is added locally (no message).  Accumulation runs over
    neighbors in ascending order so shared rows stay bitwise consistent.
    """
    payloads: dict[int, dict[int, np.ndarray]] = {}
    for i in range(proj.n_sub):
        out: dict[int, np.ndarray] = {}
        for j in proj.neighbor_sets[i].tolist():
            if j == i:
                continue
            pos_j, pos_i = proj.overlaps[(j, i)]  # receiver-j positions, sender-i positions
            out[j] = vectors[i][pos_i]
        payloads[i] = out
    delivered = net.neighbor_exchange(payloads)

    summed: list[np.ndarray] = []
    for i in range(proj.n_sub):
        acc = np.zeros_like(vectors[i])
        for j in proj.neighbor_sets[i].tolist():
            if j == i:
                acc[...] += vectors[i]
            else:
                pos_i, _ = proj.overlaps[(i, j)]
                acc[pos_i] += delivered[i][j]
        summed.append(acc)
    return summed


def dcg_init(
    contributions: list,
    lam0: list[np.ndarray],
    proj: ProjectionMap,
    net: Network,
) -> DcgState:
    """Initial residual/direction from neighbor sums and the eta global sum."""
    net.set_phase("dcg_init")
    t = [c.rhs_hat - c.schur_hat @ lam0[i] for i, c in enumerate(contributions)]
    r = exchange_overlap_sums(t, proj, net)
    eta_i = np.array(
        [float(ri @ (ri / proj.counts[i])) if ri.size else 0.0 for i, ri in enumerate(r)]
    )
    eta = net.global_scalar_reduce({i: eta_i[i] for i in range(proj.n_sub)}, op="sum")
    return DcgState(
        lam=[l.copy() for l in lam0],
        r=r,
        p=[ri.copy() for ri in r],
        u=[np.zeros_like(ri) for ri in r],
        sigma_i=np.zeros(proj.n_sub),
        eta_i=eta_i,
        eta=eta,
    )


def dcg_iterate(state: DcgState, contributions: list, proj: ProjectionMap, net: Network) -> DcgState:
    """One full sweep: curvature sum, neighbor exchange, residual/direction update.

    No-op when the state is already converged (eta == 0).  Raises
    SchurNotPositiveDefinite on nonpositive curvature.
    """
    if state.eta == 0.0:
        return state
    net.set_phase("dcg_iterate")
    n_sub = proj.n_sub

    for i in range(n_sub):
        state.u[i] = contributions[i].schur_hat @ state.p[i] if state.p[i].size else np.zeros(0)
        state.sigma_i[i] = float(state.p[i] @ state.u[i]) if state.p[i].size else 0.0
    sigma = net.global_scalar_reduce({i: state.sigma_i[i] for i in range(n_sub)}, op="sum")
    if sigma <= 0.0:
        raise SchurNotPositiveDefinite(
            f"curvature p^T S p = {sigma:.6e} <= 0 along the current search direction"
        )
    state.sigma = sigma

    u_sum = exchange_overlap_sums(state.u, proj, net)
    step = state.eta / sigma
    eta_i_new = np.zeros(n_sub)
    for i in range(n_sub):
        state.lam[i] = state.lam[i] + step * state.p[i]  # uses the pre-update direction
        state.r[i] = state.r[i] - step * u_sum[i]
        eta_i_new[i] = float(state.r[i] @ (state.r[i] / proj.counts[i])) if state.r[i].size else 0.0
    eta_new = net.global_scalar_reduce({i: eta_i_new[i] for i in range(n_sub)}, op="sum")

    ratio = eta_new / state.eta
    for i in range(n_sub):
        state.p[i] = state.r[i] + ratio * state.p[i]
    state.eta_i = eta_i_new
    state.eta = eta_new
    state.n += 1
    return state


def _check_residual(state: DcgState, proj: ProjectionMap, net: Network) -> float:
    """max_i ||r_i||_inf via one global max-reduction (termination traffic)."""
    net.set_phase("dcg_check")
    local = {
        i: float(np.max(np.abs(state.r[i]))) if state.r[i].size else 0.0
        for i in range(proj.n_sub)
    }
    return net.global_scalar_reduce(local, op="max")


def _validate_consistency(lam0: list[np.ndarray], proj: ProjectionMap) -> None:
    for (i, j), (pos_i, pos_j) in proj.overlaps.items():
        if i < j and np.any(lam0[i][pos_i] != lam0[j][pos_j]):
            raise InconsistentInitialState(
                f"initial multiplier segments of subsystems {i} and {j} disagree on shared rows"
            )


def dcg_solve(
    contributions: list,
    lam0: list[np.ndarray],
    proj: ProjectionMap,
    tolerance: float,
    max_inner: int,
    net: Network,
) -> DcgResult:
    """Iterate until max_i ||r_i||_inf <= tolerance, exact zero, or max_inner.

    Hitting max_inner flags the result as truncated rather than raising; the
    outer loop owns that policy.  The returned segments agree bitwise on
    shared consensus rows.
    """
    if tolerance <= 0.0:
        raise ValueError("tolerance must be positive")
    _validate_consistency(lam0, proj)
    state = dcg_init(contributions, lam0, proj, net)
    res = _check_residual(state, proj, net)
    norms = [res]
    while state.eta != 0.0 and res > tolerance and state.n < max_inner:
        dcg_iterate(state, contributions, proj, net)
        res = _check_residual(state, proj, net)
        norms.append(res)
    return DcgResult(
        lam=state.lam,
        iterations=state.n,
        residual_norms=norms,
        truncated=res > tolerance,
    )
