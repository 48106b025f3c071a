"""Built-in regression problems and randomized instance generators."""

from __future__ import annotations

import numpy as np

from .poly import Polynomial, polynomial_subsystem
from .problem import PartitionedProblem, RowSparseMatrix

__all__ = [
    "qp_pair",
    "bound_pair",
    "random_qp",
    "licq_violating_pair",
    "random_newton_instance",
    "builtin_problem",
    "BUILTIN_PROBLEMS",
]


def qp_pair() -> PartitionedProblem:
    """Two scalar quadratics f_i = x^2/2 coupled by x_1 + x_2 = 2.

    Solution x = (1, 1), consensus multiplier -1, objective 1; one exact
    Newton step from the origin lands on it.
    """
    subs = [
        polynomial_subsystem(
            i,
            Polynomial.quadratic(np.array([[1.0]])),
            RowSparseMatrix.from_dense(np.array([[1.0]])),
        )
        for i in range(2)
    ]
    return PartitionedProblem(subsystems=subs, b=np.array([2.0]), n_consensus=1)


def bound_pair() -> PartitionedProblem:
    """min (x1-2)^2/2 + x2^2/2  s.t.  x1 = x2,  x1 <= 1/2.

    The bound is active at the solution x = (1/2, 1/2) with inequality
    multiplier 1 and consensus multiplier 1/2 (strict complementarity holds).
    """
    sub0 = polynomial_subsystem(
        0,
        Polynomial.quadratic(np.array([[1.0]]), np.array([-2.0]), const=2.0),
        RowSparseMatrix.from_dense(np.array([[1.0]])),
        ineqs=[Polynomial.affine(np.array([1.0]), const=-0.5)],
    )
    sub1 = polynomial_subsystem(
        1,
        Polynomial.quadratic(np.array([[1.0]])),
        RowSparseMatrix.from_dense(np.array([[-1.0]])),
    )
    return PartitionedProblem(subsystems=[sub0, sub1], b=np.array([0.0]), n_consensus=1)


def random_qp(seed: int = 0) -> PartitionedProblem:
    """Seeded convex QP with three subsystems, box inequalities and full
    consensus coverage; solvable from the default start."""
    rng = np.random.default_rng(seed)
    n_c = 2
    subs = []
    for i in range(3):
        n = int(rng.integers(2, 4))
        root = rng.normal(size=(n, n))
        Q = root @ root.T + n * np.eye(n)
        c = rng.normal(size=n)
        obj = Polynomial.quadratic(Q, c)
        # loose box constraints: x_j <= 5 for each variable
        ineqs = [Polynomial.affine(np.eye(n)[j], const=-5.0) for j in range(n)]
        A = rng.normal(size=(n_c, n))
        subs.append(
            polynomial_subsystem(
                i, obj, RowSparseMatrix.from_dense(A), ineqs=ineqs
            )
        )
    b = rng.normal(size=n_c)
    return PartitionedProblem(subsystems=subs, b=b, n_consensus=n_c)


def licq_violating_pair() -> PartitionedProblem:
    """Duplicated consensus rows make the stacked coupling rank deficient.

    Both coupling matrices repeat the same row, so the assembled Schur matrix
    is singular by construction; the positive-definiteness check must fail.
    """
    subs = [
        polynomial_subsystem(
            i,
            Polynomial.quadratic(np.array([[1.0]])),
            RowSparseMatrix.from_dense(np.array([[1.0], [1.0]])),
        )
        for i in range(2)
    ]
    return PartitionedProblem(subsystems=subs, b=np.zeros(2), n_consensus=2)


def random_newton_instance(rng: np.random.Generator, n_sub: int | None = None):
    """Random small instance plus a strictly interior point and barrier value.

    Used to compare the Schur-reduced step against the direct solve of the
    full Newton system.  The data is regular by construction: convexified
    curvature, and the stacked equality-type rows (local equality Jacobians
    plus the coupling rows) have full row rank, re-drawing if a random
    support pattern comes out rank deficient.  Consensus rows not covered by
    every subsystem get b = 0 so the per-subsystem -b/|S| spread aggregates
    exactly (see SchurContribution notes).

    Returns (problem, point, delta) with point built from per-subsystem
    (x, v, gamma, mu) draws.
    """
    from .problem import PrimalDualPoint, SubsystemPoint

    for _ in range(200):
        want_sub = n_sub if n_sub is not None else int(rng.integers(1, 4))
        n_c = int(rng.integers(1, 4))

        # Row supports: every subsystem touches >= 1 row, every row covered.
        supports = rng.random((want_sub, n_c)) < 0.7
        for i in range(want_sub):
            if not supports[i].any():
                supports[i, int(rng.integers(0, n_c))] = True
        for row in range(n_c):
            if not supports[:, row].any():
                supports[int(rng.integers(0, want_sub)), row] = True

        dims = [int(rng.integers(1, 5)) for _ in range(want_sub)]
        n_gs = [int(rng.integers(0, min(n, 2) + 1)) for n in dims]
        jac_blocks = [rng.normal(size=(n_gs[i], dims[i])) for i in range(want_sub)]
        a_blocks = []
        for i in range(want_sub):
            A = np.zeros((n_c, dims[i]))
            A[supports[i]] = rng.normal(size=(int(supports[i].sum()), dims[i]))
            a_blocks.append(A)

        # Regularity: local Jacobians and coupling rows jointly full row rank.
        n_total = sum(dims)
        rows = []
        off = 0
        for i in range(want_sub):
            block = np.zeros((n_gs[i], n_total))
            block[:, off : off + dims[i]] = jac_blocks[i]
            rows.append(block)
            off += dims[i]
        rows.append(np.hstack(a_blocks))
        stacked = np.vstack(rows)
        if stacked.shape[0] > n_total or np.linalg.matrix_rank(stacked) < stacked.shape[0]:
            continue

        subs = []
        parts = []
        for i in range(want_sub):
            n, n_g = dims[i], n_gs[i]
            n_h = int(rng.integers(0, 3))
            root = rng.normal(size=(n, n))
            obj = Polynomial.quadratic(root @ root.T + n * np.eye(n), rng.normal(size=n))
            eqs = [
                Polynomial.affine(jac_blocks[i][r], const=float(rng.normal()))
                for r in range(n_g)
            ]
            ineqs = [
                Polynomial.affine(rng.normal(size=n), const=float(rng.normal()))
                for _ in range(n_h)
            ]
            subs.append(
                polynomial_subsystem(
                    i, obj, RowSparseMatrix.from_dense(a_blocks[i]), eqs, ineqs
                )
            )
            parts.append(
                SubsystemPoint(
                    x=rng.normal(size=n),
                    v=rng.uniform(0.5, 2.0, size=n_h),
                    gamma=rng.normal(size=n_g),
                    mu=rng.uniform(0.5, 2.0, size=n_h),
                )
            )
        coverage = supports.sum(axis=0)
        b = np.where(coverage == want_sub, rng.normal(size=n_c), 0.0)
        problem = PartitionedProblem(subsystems=subs, b=b, n_consensus=n_c)
        point = PrimalDualPoint(parts=parts, lam=rng.normal(size=n_c))
        delta = float(rng.uniform(1e-3, 0.5))
        return problem, point, delta
    raise RuntimeError("could not draw a regular instance in 200 attempts")


BUILTIN_PROBLEMS = {
    "qp_pair": lambda seed: qp_pair(),
    "bound_pair": lambda seed: bound_pair(),
    "random_qp": random_qp,
    "licq_pair": lambda seed: licq_violating_pair(),
}


def builtin_problem(name: str, seed: int = 0) -> PartitionedProblem:
    try:
        factory = BUILTIN_PROBLEMS[name]
    except KeyError:
        raise KeyError(
            f"unknown problem {name!r}; built-ins: {', '.join(sorted(BUILTIN_PROBLEMS))}"
        ) from None
    return factory(seed)
