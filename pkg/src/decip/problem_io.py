"""Versioned plain-text problem-instance format.

Grammar (line oriented, ``#`` starts a comment, blank lines ignored)::

    problem v1
    subsystems <count>
    consensus <n_c>
    b <v_1> ... <v_nc>
    subsystem <index>
    vars <n>
    obj term <coef> [<var>:<power> ...]      # repeatable, sums monomials
    eq <n_g>                                 # declares equality row count
    eq <row> term <coef> [<var>:<power> ...] # adds a monomial to row
    ineq <n_h>
    ineq <row> term <coef> [...]
    coupling <row> <col> <value>             # coordinate triplets of A_i
    end

Objectives and constraint rows are polynomials (the built-in function
family); arbitrary callback-defined problems are code-level only and cannot
be expressed in a file.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .poly import Polynomial, polynomial_subsystem
from .problem import PartitionedProblem, RowSparseMatrix

__all__ = ["ProblemFormatError", "load_problem", "loads_problem", "save_problem"]

FORMAT_TAG = "problem v1"


class ProblemFormatError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _parse_term(parts: list[str], n_vars: int, lineno: int) -> tuple[float, dict[int, int]]:
    try:
        coef = float(parts[0])
    except ValueError:
        raise ProblemFormatError(lineno, f"bad coefficient {parts[0]!r}") from None
    powers: dict[int, int] = {}
    for token in parts[1:]:
        var, _, power = token.partition(":")
        try:
            v, p = int(var), int(power) if power else 1
        except ValueError:
            raise ProblemFormatError(lineno, f"bad monomial token {token!r}") from None
        if not 0 <= v < n_vars:
            raise ProblemFormatError(lineno, f"variable {v} outside 0..{n_vars - 1}")
        powers[v] = powers.get(v, 0) + p
    return coef, powers


def loads_problem(text: str) -> PartitionedProblem:
    lines = text.splitlines()
    n_sub = None
    n_c = None
    b = None
    subsystems: dict[int, dict] = {}
    current: dict | None = None
    tag_seen = False

    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0]
        if not tag_seen:
            if line != FORMAT_TAG:
                raise ProblemFormatError(lineno, f"expected {FORMAT_TAG!r} header, got {line!r}")
            tag_seen = True
            continue
        if key == "subsystems":
            n_sub = int(parts[1])
        elif key == "consensus":
            n_c = int(parts[1])
        elif key == "b":
            if n_c is None:
                raise ProblemFormatError(lineno, "b before consensus count")
            if len(parts) - 1 != n_c:
                raise ProblemFormatError(lineno, f"b needs {n_c} values, got {len(parts) - 1}")
            b = np.array([float(v) for v in parts[1:]])
        elif key == "subsystem":
            if current is not None:
                raise ProblemFormatError(lineno, "previous subsystem not closed with 'end'")
            current = {
                "index": int(parts[1]),
                "vars": None,
                "obj": [],
                "eq": None,
                "ineq": None,
                "eq_terms": {},
                "ineq_terms": {},
                "coupling": [],
            }
        elif key == "end":
            if current is None:
                raise ProblemFormatError(lineno, "'end' outside a subsystem block")
            if current["vars"] is None:
                raise ProblemFormatError(lineno, f"subsystem {current['index']} missing vars")
            subsystems[current["index"]] = current
            current = None
        elif current is None:
            raise ProblemFormatError(lineno, f"unexpected directive {key!r} outside subsystem")
        elif key == "vars":
            current["vars"] = int(parts[1])
        elif key == "obj":
            if parts[1] != "term":
                raise ProblemFormatError(lineno, "obj lines must be 'obj term ...'")
            current["obj"].append(_parse_term(parts[2:], current["vars"], lineno))
        elif key in ("eq", "ineq"):
            terms_key = f"{key}_terms"
            if len(parts) == 2:  # row-count declaration
                current[key] = int(parts[1])
            else:
                if parts[2] != "term":
                    raise ProblemFormatError(lineno, f"{key} lines must be '{key} <row> term ...'")
                row = int(parts[1])
                declared = current[key]
                if declared is None or not 0 <= row < declared:
                    raise ProblemFormatError(lineno, f"{key} row {row} undeclared")
                current[terms_key].setdefault(row, []).append(
                    _parse_term(parts[3:], current["vars"], lineno)
                )
        elif key == "coupling":
            if n_c is None:
                raise ProblemFormatError(lineno, "coupling before consensus count")
            row, col, value = int(parts[1]), int(parts[2]), float(parts[3])
            if not 0 <= row < n_c:
                raise ProblemFormatError(lineno, f"coupling row {row} outside 0..{n_c - 1}")
            if not 0 <= col < current["vars"]:
                raise ProblemFormatError(lineno, f"coupling col {col} outside variable range")
            current["coupling"].append((row, col, value))
        else:
            raise ProblemFormatError(lineno, f"unknown directive {key!r}")

    if current is not None:
        raise ProblemFormatError(len(lines), "unterminated subsystem block")
    if n_sub is None or n_c is None or b is None:
        raise ProblemFormatError(len(lines), "missing subsystems/consensus/b header")
    if sorted(subsystems) != list(range(n_sub)):
        raise ProblemFormatError(
            len(lines), f"expected subsystems 0..{n_sub - 1}, found {sorted(subsystems)}"
        )

    specs = []
    for i in range(n_sub):
        blk = subsystems[i]
        n = blk["vars"]

        def build_poly(terms: list[tuple[float, dict[int, int]]]) -> Polynomial:
            poly = Polynomial(n)
            for coef, powers in terms:
                poly.add_term(coef, powers)
            return poly

        obj = build_poly(blk["obj"])
        eqs = [build_poly(blk["eq_terms"].get(r, [])) for r in range(blk["eq"] or 0)]
        ineqs = [build_poly(blk["ineq_terms"].get(r, [])) for r in range(blk["ineq"] or 0)]
        coupling = RowSparseMatrix.from_triplets((n_c, n), blk["coupling"])
        specs.append(polynomial_subsystem(i, obj, coupling, eqs, ineqs))
    return PartitionedProblem(subsystems=specs, b=b, n_consensus=n_c)


def load_problem(path: str | Path) -> PartitionedProblem:
    return loads_problem(Path(path).read_text())


def _term_text(coef: float, powers: tuple[tuple[int, int], ...]) -> str:
    tokens = [format(coef, ".17g")]
    tokens += [f"{var}:{power}" for var, power in powers]
    return " ".join(tokens)


def save_problem(problem: PartitionedProblem, path: str | Path) -> None:
    """Serialize a polynomial-family problem; raises if callbacks are opaque."""
    lines = [FORMAT_TAG, f"subsystems {problem.n_sub}", f"consensus {problem.n_consensus}"]
    lines.append("b " + " ".join(format(v, ".17g") for v in problem.b))
    for s in problem.subsystems:
        polys = getattr(s, "_polynomials", None)
        if polys is None:
            raise ValueError(
                f"subsystem {s.index} was not built from polynomials; cannot serialize"
            )
        obj, eqs, ineqs = polys
        lines.append(f"subsystem {s.index}")
        lines.append(f"vars {s.dim}")
        for coef, powers in obj.terms:
            lines.append("obj term " + _term_text(coef, powers))
        lines.append(f"eq {len(eqs)}")
        for r, poly in enumerate(eqs):
            for coef, powers in poly.terms:
                lines.append(f"eq {r} term " + _term_text(coef, powers))
        lines.append(f"ineq {len(ineqs)}")
        for r, poly in enumerate(ineqs):
            for coef, powers in poly.terms:
                lines.append(f"ineq {r} term " + _term_text(coef, powers))
        dense = s.coupling.to_dense()
        for row in s.coupling.nonzero_rows:
            for col in range(s.dim):
                if dense[row, col] != 0.0:
                    lines.append(
                        f"coupling {row} {col} " + format(dense[row, col], ".17g")
                    )
        lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")
