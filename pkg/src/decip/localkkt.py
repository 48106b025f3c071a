"""Per-subsystem barrier-KKT algebra.

For each subsystem this module evaluates the perturbed KKT residual, builds
and factorizes the local Newton matrix, forms the subsystem's contribution
(S_i, s_i) to the Schur-complement system in the consensus multiplier step,
and back-substitutes the local step once that step is known.  All operations
are independent across subsystems; nothing here touches another subsystem's
state.

Block layout of the local Newton matrix (order m = n + n_h + n_g + n_h,
variables x, v, gamma, mu):

    [ H        0        Jg^T   Jh^T ]
    [ 0        V^-1 M   0      I    ]
    [ Jg       0        0      0    ]
    [ Jh       I        0      0    ]

with H the Lagrangian Hessian, V = diag(v), M = diag(mu).  The (2,2) block
is the barrier-row Jacobian delta * V^-2 written via the central-path
substitution delta * V^-1 = M; it is diagonal positive definite whenever
v, mu > 0, which is what makes the condensed curvature H + Jh^T V^-1 M Jh
accumulate and the summed consensus Schur matrix positive definite under
regular data.  The matrix is symmetric.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .problem import PrimalDualPoint, RowSparseMatrix, SubsystemPoint, SubsystemSpec

__all__ = [
    "InteriorViolation",
    "AssemblyError",
    "SubsystemFactorizationError",
    "LocalKktMatrix",
    "KktFactorization",
    "SchurContribution",
    "eval_barrier_residual",
    "eval_residual_f0_blocks",
    "assemble_local_kkt",
    "factorize_local_kkt",
    "compute_schur_contribution",
    "recover_local_step",
    "split_step",
]

COND_THRESHOLD = 1e12
# Inertia-correcting shifts: 1e-8 ... 1e-2 handles near-singular blocks; the
# extension up to 1e6 covers transient indefiniteness of nonconvex Lagrangian
# Hessians far from a solution, where the shift must reach the Hessian scale.
RHO_LADDER = (0.0,) + tuple(10.0**k for k in range(-8, 7))


class InteriorViolation(Exception):
    """A slack or inequality multiplier left the strict interior."""


class AssemblyError(Exception):
    """Non-finite entries encountered while assembling the Newton matrix."""


class SubsystemFactorizationError(Exception):
    """Local Newton matrix still effectively singular after the rho ladder."""

    def __init__(self, index: int, cond_estimate: float):
        self.index = index
        self.cond_estimate = cond_estimate
        super().__init__(
            f"subsystem {index}: KKT matrix effectively singular "
            f"(condition estimate {cond_estimate:.3e} after maximum regularization)"
        )


def eval_barrier_residual(
    spec: SubsystemSpec, point_i: SubsystemPoint, lam: np.ndarray, delta: float
) -> np.ndarray:
    """Stacked local residual of the perturbed first-order conditions.

    Rows: stationarity, -delta * V^-1 1 + mu, g(x), h(x) + v.
    Requires v > 0 componentwise (the barrier row divides by v).
    """
    x, v, gamma, mu = point_i.x, point_i.v, point_i.gamma, point_i.mu
    if spec.n_ineq and not np.all(v > 0):
        raise InteriorViolation(
            f"subsystem {spec.index}: slack not strictly positive (min v = {v.min():.3e})"
        )
    stationarity = np.asarray(spec.grad_f(x), dtype=float).copy()
    if spec.n_eq:
        stationarity += spec.eval_jac_g(x).T @ gamma
    if spec.n_ineq:
        stationarity += spec.eval_jac_h(x).T @ mu
    stationarity += spec.coupling.rmatvec(lam)
    barrier = -delta / v + mu if spec.n_ineq else np.zeros(0)
    return np.concatenate([stationarity, barrier, spec.eval_g(x), spec.eval_h(x) + v])


def eval_residual_f0_blocks(
    spec: SubsystemSpec, point_i: SubsystemPoint, lam: np.ndarray
) -> np.ndarray:
    """Unperturbed KKT residual blocks with multiplied complementarity V mu.

    This is the delta = 0 optimality measure used for oracle certification
    and rate diagnostics; the row scaling by V keeps it finite on the
    boundary (v -> 0) where the barrier row form is not.
    """
    x, v, gamma, mu = point_i.x, point_i.v, point_i.gamma, point_i.mu
    stationarity = np.asarray(spec.grad_f(x), dtype=float).copy()
    if spec.n_eq:
        stationarity += spec.eval_jac_g(x).T @ gamma
    if spec.n_ineq:
        stationarity += spec.eval_jac_h(x).T @ mu
    stationarity += spec.coupling.rmatvec(lam)
    return np.concatenate([stationarity, v * mu, spec.eval_g(x), spec.eval_h(x) + v])


@dataclass
class KktFactorization:
    """Symmetric indefinite (Bunch-Kaufman) factorization handle.

    The factorization is taken of ``D K D`` with the symmetric max-abs
    equilibration D = diag(1/sqrt(max|row|)); solves unscale transparently.
    ``cond_estimate`` is the 1-norm condition estimate of the equilibrated
    matrix, which measures structural (scaling-independent) singularity: the
    raw barrier KKT matrix legitimately carries mu/v ~ 1/delta row scales
    near convergence.  ``inertia`` is (positive, negative, zero) eigenvalue
    counts, read off the block-diagonal factor.
    """

    factor: np.ndarray
    ipiv: np.ndarray
    scale: np.ndarray
    cond_estimate: float
    inertia: tuple[int, int, int]
    rho: float
    attempts: int

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        scaled = rhs * self.scale if rhs.ndim == 1 else rhs * self.scale[:, None]
        y, info = lapack.dsytrs(self.factor, self.ipiv, scaled, lower=1)
        if info != 0:
            raise np.linalg.LinAlgError(f"dsytrs failed with info={info}")
        return y * self.scale if rhs.ndim == 1 else y * self.scale[:, None]


@dataclass
class LocalKktMatrix:
    """Assembled local Newton matrix plus applied regularization state."""

    index: int
    matrix: np.ndarray
    n_x: int
    n_eq: int
    n_ineq: int
    rho: float = 0.0
    factorization: KktFactorization | None = None

    @property
    def order(self) -> int:
        return self.matrix.shape[0]

    @property
    def expected_inertia(self) -> tuple[int, int, int]:
        """Correct saddle inertia: curvature rows positive, constraint rows
        negative, nothing singular."""
        return (self.n_x + self.n_ineq, self.n_eq + self.n_ineq, 0)


def assemble_local_kkt(
    spec: SubsystemSpec, point_i: SubsystemPoint, delta: float
) -> LocalKktMatrix:
    """Fill the block Newton matrix at the current iterate.

    ``delta`` does not enter the matrix itself: the (2,2) block uses the
    substitution delta * V^-2 = V^-1 (delta V^-1) with delta V^-1 = M at a
    root of the barrier row, i.e. V^-1 M.
    """
    n, ng, nh = spec.dim, spec.n_eq, spec.n_ineq
    x, v, mu = point_i.x, point_i.v, point_i.mu
    if nh and (not np.all(v > 0) or not np.all(mu > 0)):
        raise InteriorViolation(
            f"subsystem {spec.index}: (v, mu) not strictly interior"
        )
    m = n + nh + ng + nh
    kkt = np.zeros((m, m))
    H = spec.eval_hess_lag(x, point_i.gamma, mu)
    jg = spec.eval_jac_g(x)
    jh = spec.eval_jac_h(x)
    for name, block in (("Hessian", H), ("equality Jacobian", jg), ("inequality Jacobian", jh)):
        if not np.all(np.isfinite(block)):
            raise AssemblyError(f"subsystem {spec.index}: non-finite {name} entries")

    ix = slice(0, n)
    iv = slice(n, n + nh)
    ig = slice(n + nh, n + nh + ng)
    im = slice(n + nh + ng, m)
    kkt[ix, ix] = H
    kkt[ix, ig] = jg.T
    kkt[ix, im] = jh.T
    if nh:
        kkt[iv, iv] = np.diag(mu / v)
        kkt[iv, im] = np.eye(nh)
        kkt[im, iv] = np.eye(nh)
    kkt[ig, ix] = jg
    kkt[im, ix] = jh
    return LocalKktMatrix(index=spec.index, matrix=kkt, n_x=n, n_eq=ng, n_ineq=nh)


def _inertia_from_sytrf(factor: np.ndarray, ipiv: np.ndarray) -> tuple[int, int, int]:
    """Eigenvalue sign counts of the block-diagonal factor (lower storage).

    1x1 pivots contribute the sign of their diagonal entry; 2x2 pivots
    (marked by equal negative ipiv pairs) contribute the signs of the block's
    two eigenvalues.
    """
    m = factor.shape[0]
    pos = neg = zero = 0
    k = 0
    while k < m:
        if ipiv[k] > 0:
            d = factor[k, k]
            if d > 0.0:
                pos += 1
            elif d < 0.0:
                neg += 1
            else:
                zero += 1
            k += 1
        else:
            a, b, c = factor[k, k], factor[k + 1, k], factor[k + 1, k + 1]
            tr, det = a + c, a * c - b * b
            disc = np.sqrt(max(tr * tr / 4.0 - det, 0.0))
            for eig in (tr / 2.0 + disc, tr / 2.0 - disc):
                if eig > 0.0:
                    pos += 1
                elif eig < 0.0:
                    neg += 1
                else:
                    zero += 1
            k += 2
    return pos, neg, zero


def _try_factor(matrix: np.ndarray):
    """Symmetrically equilibrated Bunch-Kaufman factorization attempt."""
    d = np.sqrt(np.max(np.abs(matrix), axis=1))
    d[d == 0.0] = 1.0
    d = 1.0 / d
    scaled = matrix * d[:, None] * d[None, :]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        factor, ipiv, info = lapack.dsytrf(scaled, lower=1)
    if info != 0 or not np.all(np.isfinite(factor)):
        return None
    anorm = np.linalg.norm(scaled, 1)
    rcond, cinfo = lapack.dsycon(factor, ipiv, anorm, lower=1)
    if cinfo != 0 or rcond <= 0.0 or not np.isfinite(rcond):
        cond = np.inf
    else:
        cond = 1.0 / rcond
    return factor, ipiv, d, cond, _inertia_from_sytrf(factor, ipiv)


def factorize_local_kkt(kkt: LocalKktMatrix) -> KktFactorization:
    """Factorize, walking the inertia-correcting regularization ladder.

    A factorization is accepted when it is nonsingular, its (equilibrated)
    condition estimate is at most COND_THRESHOLD, and its inertia matches the
    saddle signature (n_x + n_h positive, n_g + n_h negative).  Otherwise
    rho * I is added to the (1,1) block with rho stepping 1e-8, 1e-7, ...,
    1e-2 and the attempt repeats; the applied rho is recorded.  Correct
    inertia of every local block makes each Schur contribution positive
    semidefinite, which is what the inner conjugate gradient solver needs.
    Exhausting the ladder raises SubsystemFactorizationError naming the
    subsystem.
    """
    n = kkt.n_x
    expected = kkt.expected_inertia
    attempts = 0
    last_cond = np.inf
    for rho in RHO_LADDER:
        matrix = kkt.matrix
        if rho > 0.0:
            matrix = kkt.matrix.copy()
            matrix[:n, :n] += rho * np.eye(n)
        outcome = _try_factor(matrix)
        attempts += 1
        if outcome is None:
            last_cond = np.inf
            continue
        factor, ipiv, d, cond, inertia = outcome
        last_cond = cond
        if cond <= COND_THRESHOLD and inertia == expected:
            fact = KktFactorization(
                factor=factor, ipiv=ipiv, scale=d,
                cond_estimate=cond, inertia=inertia, rho=rho, attempts=attempts,
            )
            kkt.rho = rho
            kkt.factorization = fact
            return fact
    raise SubsystemFactorizationError(kkt.index, last_cond)


@dataclass
class SchurContribution:
    """Subsystem share of the consensus-step normal system.

    ``schur`` is the full n_c x n_c matrix with exact zeros outside the
    subsystem's consensus rows C_i; ``schur_hat``/``rhs_hat`` are the
    projections onto C_i.  ``rhs`` keeps the -b/|S| spread on rows outside
    C_i, so that summing the full vectors over subsystems reproduces the
    unreduced right-hand side exactly.
    """

    index: int
    rows: np.ndarray                # C_i
    schur: np.ndarray               # S_i, n_c x n_c
    rhs: np.ndarray                 # s_i, length n_c
    schur_hat: np.ndarray           # |C_i| x |C_i|
    rhs_hat: np.ndarray             # length |C_i|


def compute_schur_contribution(
    spec: SubsystemSpec,
    fact: KktFactorization,
    point_i: SubsystemPoint,
    lam: np.ndarray,
    delta: float,
    b: np.ndarray,
    n_sub: int,
    residual: np.ndarray | None = None,
) -> SchurContribution:
    """Form (S_i, s_i) and their projections from one factorization.

    S_i needs |C_i| solves against the coupling columns; s_i one more against
    the current residual.  ``residual`` may pass a precomputed
    barrier residual to avoid re-evaluating callbacks.
    """
    n_c = b.shape[0]
    rows = spec.coupling.nonzero_rows
    n, m = spec.dim, fact.factor.shape[0]
    a_hat = spec.coupling.submatrix(rows)           # |C_i| x n

    schur_hat = np.zeros((len(rows), len(rows)))
    if len(rows):
        rhs_cols = np.zeros((m, len(rows)))
        rhs_cols[:n, :] = a_hat.T
        z = fact.solve(rhs_cols)
        schur_hat = a_hat @ z[:n, :]
        schur_hat = 0.5 * (schur_hat + schur_hat.T)  # S_i is symmetric; drop LU roundoff skew

    if residual is None:
        residual = eval_barrier_residual(spec, point_i, lam, delta)
    w = fact.solve(residual)
    rhs_hat = -b[rows] / n_sub
    if len(rows):
        rhs_hat = a_hat @ point_i.x - a_hat @ w[:n] - b[rows] / n_sub

    schur = np.zeros((n_c, n_c))
    if len(rows):
        schur[np.ix_(rows, rows)] = schur_hat
    rhs = -b / n_sub
    rhs[rows] = rhs_hat
    return SchurContribution(
        index=spec.index, rows=rows, schur=schur, rhs=rhs,
        schur_hat=schur_hat, rhs_hat=rhs_hat,
    )


def recover_local_step(
    spec: SubsystemSpec,
    fact: KktFactorization,
    residual: np.ndarray,
    dlam: np.ndarray,
) -> np.ndarray:
    """Back-substitute the local step: -(KKT)^-1 (F_i + A~_i^T dlam)."""
    rhs = residual.copy()
    rhs[: spec.dim] += spec.coupling.rmatvec(dlam)
    return -fact.solve(rhs)


def split_step(spec: SubsystemSpec, dp: np.ndarray) -> SubsystemPoint:
    """View a stacked local step as (dx, dv, dgamma, dmu) blocks."""
    n, ng, nh = spec.dim, spec.n_eq, spec.n_ineq
    return SubsystemPoint(
        x=dp[:n],
        v=dp[n : n + nh],
        gamma=dp[n + nh : n + nh + ng],
        mu=dp[n + nh + ng :],
    )
