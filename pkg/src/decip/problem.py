"""Partially separable NLP instances and their coupling topology.

A problem is a collection of subsystems, each owning a local objective
``f_i``, local equality/inequality constraints ``g_i``/``h_i`` and a coupling
matrix ``A_i``, tied together by the affine consensus constraint
``sum_i A_i x_i = b``.  Everything downstream (local KKT algebra, the
decentralized inner solver, the outer interior point loop) works off the
types defined here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "RowSparseMatrix",
    "SubsystemSpec",
    "PartitionedProblem",
    "SubsystemPoint",
    "PrimalDualPoint",
    "CouplingTopology",
    "ValidationReport",
    "fd_jacobian",
    "fd_hess_lag",
    "validate_problem",
    "build_topology",
    "consensus_residual",
]

FD_STEP = 1e-7  # central-difference step for the derivative fallback


class RowSparseMatrix:
    """Real ``n_rows x n_cols`` matrix stored as {row index -> dense row}.

    Consensus coupling matrices are sparse by rows (most consensus rows do
    not touch a given subsystem), and the set of nonzero rows is exactly the
    decentralization lever, so rows are the native storage unit.  Rows whose
    entries are all zero are dropped on construction: a stored row is a
    nonzero row by definition.
    """

    def __init__(self, shape: tuple[int, int], rows: dict[int, np.ndarray] | None = None):
        n_rows, n_cols = shape
        if n_rows < 0 or n_cols < 0:
            raise ValueError(f"invalid shape {shape}")
        self.shape = (int(n_rows), int(n_cols))
        self._rows: dict[int, np.ndarray] = {}
        if rows:
            for idx, row in rows.items():
                self._set_row(int(idx), np.asarray(row, dtype=float))

    def _set_row(self, idx: int, row: np.ndarray) -> None:
        if not 0 <= idx < self.shape[0]:
            raise ValueError(f"row index {idx} outside {self.shape}")
        if row.shape != (self.shape[1],):
            raise ValueError(f"row {idx} has length {row.shape}, expected {self.shape[1]}")
        if np.any(row != 0.0):
            self._rows[idx] = row.copy()

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "RowSparseMatrix":
        dense = np.asarray(dense, dtype=float)
        if dense.ndim != 2:
            raise ValueError("expected a 2-D array")
        return cls(dense.shape, {i: dense[i] for i in range(dense.shape[0])})

    @classmethod
    def from_triplets(
        cls, shape: tuple[int, int], triplets: Sequence[tuple[int, int, float]]
    ) -> "RowSparseMatrix":
        """Build from (row, col, value) coordinate triplets."""
        acc: dict[int, np.ndarray] = {}
        for r, c, v in triplets:
            r, c = int(r), int(c)
            if not (0 <= r < shape[0] and 0 <= c < shape[1]):
                raise ValueError(f"triplet ({r}, {c}) outside shape {shape}")
            acc.setdefault(r, np.zeros(shape[1]))[c] += float(v)
        return cls(shape, acc)

    @property
    def nonzero_rows(self) -> np.ndarray:
        """Sorted indices of rows with at least one nonzero entry."""
        return np.array(sorted(self._rows), dtype=int)

    def row(self, idx: int) -> np.ndarray:
        return self._rows.get(idx, np.zeros(self.shape[1])).copy()

    def submatrix(self, row_ids: np.ndarray) -> np.ndarray:
        """Dense ``len(row_ids) x n_cols`` stack of the requested rows."""
        out = np.zeros((len(row_ids), self.shape[1]))
        for k, idx in enumerate(row_ids):
            r = self._rows.get(int(idx))
            if r is not None:
                out[k] = r
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """A @ x as a dense length-n_rows vector."""
        out = np.zeros(self.shape[0])
        for idx in sorted(self._rows):
            out[idx] = self._rows[idx] @ x
        return out

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        """A.T @ y; only the stored (nonzero) rows of A contribute."""
        out = np.zeros(self.shape[1])
        for idx in sorted(self._rows):
            out += self._rows[idx] * y[idx]
        return out

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for idx, r in self._rows.items():
            out[idx] = r
        return out

    def __repr__(self) -> str:  # pragma: no cover
        return f"RowSparseMatrix(shape={self.shape}, nnz_rows={len(self._rows)})"


@dataclass
class SubsystemSpec:
    """One subsystem of a partially separable NLP.

    Callbacks are the contract and must be deterministic and re-entrant.
    ``jac_g``/``jac_h``/``hess_lag`` may be None, in which case a central
    finite-difference fallback (step ``FD_STEP``) is used and flagged by
    :func:`validate_problem`.

    ``hess_lag(x, gamma, mu)`` must return the Hessian of
    ``f(x) + gamma . g(x) + mu . h(x)`` with respect to ``x``.
    """

    index: int
    dim: int
    n_eq: int
    n_ineq: int
    f: Callable[[np.ndarray], float]
    grad_f: Callable[[np.ndarray], np.ndarray]
    coupling: RowSparseMatrix
    g: Callable[[np.ndarray], np.ndarray] | None = None
    jac_g: Callable[[np.ndarray], np.ndarray] | None = None
    h: Callable[[np.ndarray], np.ndarray] | None = None
    jac_h: Callable[[np.ndarray], np.ndarray] | None = None
    hess_lag: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray] | None = None

    def eval_g(self, x: np.ndarray) -> np.ndarray:
        if self.n_eq == 0:
            return np.zeros(0)
        return np.asarray(self.g(x), dtype=float).reshape(-1)

    def eval_h(self, x: np.ndarray) -> np.ndarray:
        if self.n_ineq == 0:
            return np.zeros(0)
        return np.asarray(self.h(x), dtype=float).reshape(-1)

    def eval_jac_g(self, x: np.ndarray) -> np.ndarray:
        if self.n_eq == 0:
            return np.zeros((0, self.dim))
        if self.jac_g is not None:
            return np.asarray(self.jac_g(x), dtype=float).reshape(self.n_eq, self.dim)
        return fd_jacobian(self.eval_g, x, self.n_eq)

    def eval_jac_h(self, x: np.ndarray) -> np.ndarray:
        if self.n_ineq == 0:
            return np.zeros((0, self.dim))
        if self.jac_h is not None:
            return np.asarray(self.jac_h(x), dtype=float).reshape(self.n_ineq, self.dim)
        return fd_jacobian(self.eval_h, x, self.n_ineq)

    def eval_hess_lag(self, x: np.ndarray, gamma: np.ndarray, mu: np.ndarray) -> np.ndarray:
        if self.hess_lag is not None:
            return np.asarray(self.hess_lag(x, gamma, mu), dtype=float).reshape(self.dim, self.dim)
        return fd_hess_lag(self, x, gamma, mu)

    @property
    def uses_fd(self) -> bool:
        needs_jg = self.n_eq > 0 and self.jac_g is None
        needs_jh = self.n_ineq > 0 and self.jac_h is None
        return needs_jg or needs_jh or self.hess_lag is None


@dataclass
class PartitionedProblem:
    """The full instance: subsystems plus the consensus right-hand side b."""

    subsystems: list[SubsystemSpec]
    b: np.ndarray
    n_consensus: int

    def __post_init__(self) -> None:
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.b.shape != (self.n_consensus,):
            raise ValueError(
                f"b has length {self.b.size}, expected n_consensus={self.n_consensus}"
            )

    @property
    def n_sub(self) -> int:
        return len(self.subsystems)

    def objective(self, x_parts: Sequence[np.ndarray]) -> float:
        return float(sum(s.f(x) for s, x in zip(self.subsystems, x_parts)))


@dataclass
class SubsystemPoint:
    """Local primal-dual block p_i = (x_i, v_i, gamma_i, mu_i)."""

    x: np.ndarray
    v: np.ndarray
    gamma: np.ndarray
    mu: np.ndarray

    def copy(self) -> "SubsystemPoint":
        return SubsystemPoint(self.x.copy(), self.v.copy(), self.gamma.copy(), self.mu.copy())

    @property
    def size(self) -> int:
        return self.x.size + self.v.size + self.gamma.size + self.mu.size


@dataclass
class PrimalDualPoint:
    """Full iterate p = (p_1, ..., p_|S|, lambda).

    Strict interiority (v_i > 0, mu_i > 0 componentwise) is an invariant the
    fraction-to-boundary rule maintains; `strictly_interior` checks it.
    """

    parts: list[SubsystemPoint]
    lam: np.ndarray

    def copy(self) -> "PrimalDualPoint":
        return PrimalDualPoint([p.copy() for p in self.parts], self.lam.copy())

    def strictly_interior(self) -> bool:
        return all(np.all(p.v > 0) and np.all(p.mu > 0) for p in self.parts)

    @property
    def x_stacked(self) -> np.ndarray:
        return np.concatenate([p.x for p in self.parts]) if self.parts else np.zeros(0)


@dataclass
class CouplingTopology:
    """Consensus sets C_i and neighbor sets N_i.

    ``C_i`` holds exactly the indices of nonzero rows of ``A_i``; ``N_i``
    holds every j with ``C_i & C_j`` nonempty.  Note that any subsystem with a
    nonempty consensus set is its own neighbor (the inner algorithm's sums
    over ``N_i`` include the self term, which costs no communication).
    """

    consensus_sets: list[np.ndarray]
    neighbor_sets: list[np.ndarray]

    @property
    def n_sub(self) -> int:
        return len(self.consensus_sets)


@dataclass
class ValidationReport:
    ok: bool
    violations: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def __str__(self) -> str:  # pragma: no cover
        status = "pass" if self.ok else "FAIL"
        lines = [f"validation: {status}"]
        lines += [f"  violation: {v}" for v in self.violations]
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines)


def fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray, m: int) -> np.ndarray:
    """Central-difference Jacobian of a vector function, step FD_STEP."""
    x = np.asarray(x, dtype=float)
    jac = np.zeros((m, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = FD_STEP
        jac[:, j] = (np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2.0 * FD_STEP)
    return jac


def fd_hess_lag(
    spec: SubsystemSpec, x: np.ndarray, gamma: np.ndarray, mu: np.ndarray
) -> np.ndarray:
    """Central-difference Hessian of the local Lagrangian via its gradient."""

    def grad_lag(z: np.ndarray) -> np.ndarray:
        out = np.asarray(spec.grad_f(z), dtype=float).copy()
        if spec.n_eq:
            out = out + spec.eval_jac_g(z).T @ gamma
        if spec.n_ineq:
            out = out + spec.eval_jac_h(z).T @ mu
        return out

    hess = fd_jacobian(grad_lag, x, spec.dim)
    return 0.5 * (hess + hess.T)


def validate_problem(
    problem: PartitionedProblem, probe: Sequence[np.ndarray] | None = None
) -> ValidationReport:
    """Check dimensions, consensus-row coverage and callback sanity.

    A callback raising or returning wrong/non-finite shapes at the probe
    point (user-provided initial x, else zeros) is reported as a violation,
    never propagated as a crash.
    """
    violations: list[str] = []
    notes: list[str] = []
    n_c = problem.n_consensus

    coverage = np.zeros(n_c, dtype=int)
    for i, s in enumerate(problem.subsystems):
        label = f"subsystem {s.index}"
        if s.coupling.shape != (n_c, s.dim):
            violations.append(
                f"{label}: coupling matrix shape {s.coupling.shape}, "
                f"expected ({n_c}, {s.dim})"
            )
        else:
            for r in s.coupling.nonzero_rows:
                coverage[r] += 1

        x0 = np.zeros(s.dim)
        if probe is not None:
            x0 = np.asarray(probe[i], dtype=float)
            if x0.shape != (s.dim,):
                violations.append(f"{label}: probe point has length {x0.size}, expected {s.dim}")
                x0 = np.zeros(s.dim)

        def check(name: str, fn: Callable[[], np.ndarray], shape: tuple[int, ...]) -> None:
            try:
                val = np.asarray(fn(), dtype=float)
            except Exception as exc:  # report, do not crash
                violations.append(f"{label}: {name} failed at probe point: {exc!r}")
                return
            if val.shape != shape:
                violations.append(f"{label}: {name} returned shape {val.shape}, expected {shape}")
            elif not np.all(np.isfinite(val)):
                violations.append(f"{label}: {name} returned non-finite values at probe point")

        check("f", lambda: np.asarray(s.f(x0), dtype=float).reshape(()), ())
        check("grad_f", lambda: s.grad_f(x0), (s.dim,))
        if s.n_eq:
            if s.g is None:
                violations.append(f"{label}: n_eq={s.n_eq} but no g callback")
            else:
                check("g", lambda: s.g(x0), (s.n_eq,))
                check("jac_g", lambda: s.eval_jac_g(x0), (s.n_eq, s.dim))
        if s.n_ineq:
            if s.h is None:
                violations.append(f"{label}: n_ineq={s.n_ineq} but no h callback")
            else:
                check("h", lambda: s.h(x0), (s.n_ineq,))
                check("jac_h", lambda: s.eval_jac_h(x0), (s.n_ineq, s.dim))
        check(
            "hess_lag",
            lambda: s.eval_hess_lag(x0, np.zeros(s.n_eq), np.zeros(s.n_ineq)),
            (s.dim, s.dim),
        )
        if s.uses_fd:
            notes.append(f"{label}: finite-difference derivative fallback in use")

    for r in range(n_c):
        if coverage[r] == 0:
            violations.append(f"consensus row {r + 1} uncovered (zero support in every A_i)")

    return ValidationReport(ok=not violations, violations=violations, notes=notes)


def build_topology(problem: PartitionedProblem) -> CouplingTopology:
    """Derive C_i (nonzero coupling rows) and N_i (overlapping subsystems)."""
    consensus_sets = [s.coupling.nonzero_rows for s in problem.subsystems]
    owners: dict[int, list[int]] = {}
    for i, rows in enumerate(consensus_sets):
        for r in rows.tolist():
            owners.setdefault(r, []).append(i)
    neighbor_sets = []
    for i, rows in enumerate(consensus_sets):
        nbrs: set[int] = set()
        for r in rows.tolist():
            nbrs.update(owners[r])
        neighbor_sets.append(np.array(sorted(nbrs), dtype=int))
    return CouplingTopology(consensus_sets=consensus_sets, neighbor_sets=neighbor_sets)


def consensus_residual(problem: PartitionedProblem, point: PrimalDualPoint) -> np.ndarray:
    """sum_i A_i x_i - b."""
    if len(point.parts) != problem.n_sub:
        raise ValueError(
            f"point has {len(point.parts)} parts, problem has {problem.n_sub} subsystems"
        )
    out = -problem.b.copy()
    for s, p in zip(problem.subsystems, point.parts):
        if p.x.shape != (s.dim,):
            raise ValueError(f"subsystem {s.index}: x has length {p.x.size}, expected {s.dim}")
        out += s.coupling.matvec(p.x)
    return out
