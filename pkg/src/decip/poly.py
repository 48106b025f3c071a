"""Polynomial function family with analytic derivatives.

Objectives and constraint rows of file-defined and built-in problems are
sparse multivariate polynomials (a constant plus monomial terms).  Values,
gradients and Hessians are exact, which keeps Newton-based solvers free of
finite-difference noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .problem import RowSparseMatrix, SubsystemSpec

__all__ = ["Polynomial", "polynomial_subsystem"]


@dataclass
class Polynomial:
    """sum_t coef_t * prod_j x_j^p_j over a fixed variable count."""

    n_vars: int
    terms: list[tuple[float, tuple[tuple[int, int], ...]]] = field(default_factory=list)

    def add_term(self, coef: float, powers: dict[int, int] | None = None) -> "Polynomial":
        powers = powers or {}
        for var, p in powers.items():
            if not 0 <= var < self.n_vars:
                raise ValueError(f"variable {var} outside 0..{self.n_vars - 1}")
            if p < 0:
                raise ValueError("negative powers not supported")
        key = tuple(sorted((v, p) for v, p in powers.items() if p > 0))
        self.terms.append((float(coef), key))
        return self

    @classmethod
    def quadratic(cls, Q: np.ndarray, c: np.ndarray | None = None, const: float = 0.0) -> "Polynomial":
        """0.5 x^T Q x + c^T x + const (Q symmetrized)."""
        Q = np.asarray(Q, dtype=float)
        n = Q.shape[0]
        poly = cls(n)
        sym = 0.5 * (Q + Q.T)
        for i in range(n):
            if sym[i, i] != 0.0:
                poly.add_term(0.5 * sym[i, i], {i: 2})
            for j in range(i + 1, n):
                if sym[i, j] != 0.0:
                    poly.add_term(sym[i, j], {i: 1, j: 1})
        if c is not None:
            for i, ci in enumerate(np.asarray(c, dtype=float)):
                if ci != 0.0:
                    poly.add_term(ci, {i: 1})
        if const != 0.0:
            poly.add_term(const)
        return poly

    @classmethod
    def affine(cls, coeffs: np.ndarray, const: float = 0.0) -> "Polynomial":
        coeffs = np.asarray(coeffs, dtype=float)
        poly = cls(coeffs.size)
        for i, ci in enumerate(coeffs):
            if ci != 0.0:
                poly.add_term(ci, {i: 1})
        if const != 0.0:
            poly.add_term(const)
        return poly

    def value(self, x: np.ndarray) -> float:
        total = 0.0
        for coef, powers in self.terms:
            term = coef
            for var, p in powers:
                term *= x[var] ** p
            total += term
        return total

    def grad(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_vars)
        for coef, powers in self.terms:
            for k, (var, p) in enumerate(powers):
                d = coef * p * x[var] ** (p - 1)
                for ovar, op in powers[:k] + powers[k + 1 :]:
                    d *= x[ovar] ** op
                out[var] += d
        return out

    def hess(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n_vars, self.n_vars))
        for coef, powers in self.terms:
            for a, (va, pa) in enumerate(powers):
                # d^2 / dx_va^2
                if pa >= 2:
                    d = coef * pa * (pa - 1) * x[va] ** (pa - 2)
                    for ovar, op in powers[:a] + powers[a + 1 :]:
                        d *= x[ovar] ** op
                    out[va, va] += d
                # mixed terms
                for b in range(a + 1, len(powers)):
                    vb, pb = powers[b]
                    d = coef * pa * pb * x[va] ** (pa - 1) * x[vb] ** (pb - 1)
                    for k, (ovar, op) in enumerate(powers):
                        if k != a and k != b:
                            d *= x[ovar] ** op
                    out[va, vb] += d
                    out[vb, va] += d
        return out


def polynomial_subsystem(
    index: int,
    objective: Polynomial,
    coupling: RowSparseMatrix,
    eqs: list[Polynomial] | None = None,
    ineqs: list[Polynomial] | None = None,
) -> SubsystemSpec:
    """Wrap polynomial objective/constraints as a subsystem with exact callbacks."""
    eqs = eqs or []
    ineqs = ineqs or []
    n = objective.n_vars
    for row in (*eqs, *ineqs):
        if row.n_vars != n:
            raise ValueError("constraint row variable count differs from objective")

    def hess_lag(x, gamma, mu):
        out = objective.hess(x)
        for coef, row in zip(gamma, eqs):
            out = out + coef * row.hess(x)
        for coef, row in zip(mu, ineqs):
            out = out + coef * row.hess(x)
        return out

    spec = SubsystemSpec(
        index=index,
        dim=n,
        n_eq=len(eqs),
        n_ineq=len(ineqs),
        f=objective.value,
        grad_f=objective.grad,
        coupling=coupling,
        g=(lambda x: np.array([r.value(x) for r in eqs])) if eqs else None,
        jac_g=(lambda x: np.array([r.grad(x) for r in eqs])) if eqs else None,
        h=(lambda x: np.array([r.value(x) for r in ineqs])) if ineqs else None,
        jac_h=(lambda x: np.array([r.grad(x) for r in ineqs])) if ineqs else None,
        hess_lag=hess_lag,
    )
    spec._polynomials = (objective, eqs, ineqs)  # enables file serialization
    return spec
