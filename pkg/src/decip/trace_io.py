"""Trace, communication-stats and comparison-report serialization.

Trace files are CSV with a fixed column order and `# key value` metadata
header lines.  All floats are written with repr-faithful 17-significant-digit
formatting, so identical runs produce byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .dip import ConvergenceTrace, TraceRow
from .netsim import CommStats

__all__ = [
    "TRACE_COLUMNS",
    "write_trace",
    "read_trace",
    "write_comm_stats",
    "compare_traces",
    "format_comparison",
]

TRACE_COLUMNS = (
    "k",
    "kkt_inf",
    "consensus_inf",
    "delta",
    "alpha_p",
    "alpha_d",
    "inner_iters",
    "inner_res",
    "rho_reg",
    "comm_global",
    "comm_neighbor",
    "dist_to_ref",
)


def _fmt(value: float | None) -> str:
    if value is None:
        return ""
    return format(float(value), ".17g")


def write_trace(trace: ConvergenceTrace, path: str | Path) -> None:
    lines = [f"# solver {trace.solver}", f"# problem {trace.problem}"]
    for key in sorted(trace.meta):
        lines.append(f"# {key} {trace.meta[key]}")
    lines.append(",".join(TRACE_COLUMNS))
    for r in trace.rows:
        lines.append(
            ",".join(
                [
                    str(r.k),
                    _fmt(r.kkt_inf),
                    _fmt(r.consensus_inf),
                    _fmt(r.delta),
                    _fmt(r.alpha_p),
                    _fmt(r.alpha_d),
                    str(r.inner_iters),
                    _fmt(r.inner_res),
                    _fmt(r.rho_reg),
                    str(r.comm_global),
                    str(r.comm_neighbor),
                    _fmt(r.dist_to_ref),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path: str | Path) -> ConvergenceTrace:
    meta: dict[str, str] = {}
    rows: list[TraceRow] = []
    header_seen = False
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(" ")
            meta[key] = value
            continue
        if not header_seen:
            if line != ",".join(TRACE_COLUMNS):
                raise ValueError(f"{path}:{lineno}: unexpected trace header {line!r}")
            header_seen = True
            continue
        fields = line.split(",")
        if len(fields) != len(TRACE_COLUMNS):
            raise ValueError(f"{path}:{lineno}: expected {len(TRACE_COLUMNS)} fields")
        rows.append(
            TraceRow(
                k=int(fields[0]),
                kkt_inf=float(fields[1]),
                consensus_inf=float(fields[2]),
                delta=float(fields[3]),
                alpha_p=float(fields[4]),
                alpha_d=float(fields[5]),
                inner_iters=int(fields[6]),
                inner_res=float(fields[7]),
                rho_reg=float(fields[8]),
                comm_global=int(fields[9]),
                comm_neighbor=int(fields[10]),
                dist_to_ref=float(fields[11]) if fields[11] else None,
            )
        )
    trace = ConvergenceTrace(
        solver=meta.pop("solver", "unknown"), problem=meta.pop("problem", ""), rows=rows
    )
    trace.meta = meta
    return trace


def write_comm_stats(stats: CommStats, path: str | Path) -> None:
    Path(path).write_text(stats.summary())


@dataclass
class ComparisonRow:
    solver: str
    status: str
    outer_iterations: int
    inner_iterations: int
    factorizations: int
    nlp_solves: int
    comm_global: int
    comm_neighbor: int
    final_kkt: float | None
    final_consensus: float | None
    final_dist: float | None


def compare_traces(traces: list[ConvergenceTrace]) -> list[ComparisonRow]:
    """Side-by-side work/communication/error table for runs of one problem.

    Refuses traces from different problems and requires at least two of them.
    """
    if len(traces) < 2:
        raise ValueError("comparison needs at least two traces")
    problems = {t.problem for t in traces}
    if len(problems) > 1:
        raise ValueError(f"traces come from different problems: {sorted(problems)}")
    rows = []
    for t in traces:
        last = t.rows[-1] if t.rows else None
        rows.append(
            ComparisonRow(
                solver=t.solver,
                status=t.meta.get("status", "unknown"),
                outer_iterations=t.outer_iterations,
                inner_iterations=t.total_inner_iterations,
                factorizations=int(t.meta.get("factorizations", "0")),
                nlp_solves=int(t.meta.get("nlp_solves", "0")),
                comm_global=last.comm_global if last else 0,
                comm_neighbor=last.comm_neighbor if last else 0,
                final_kkt=last.kkt_inf if last else None,
                final_consensus=last.consensus_inf if last else None,
                final_dist=last.dist_to_ref if last else None,
            )
        )
    return rows


def format_comparison(rows: list[ComparisonRow]) -> str:
    headers = (
        "solver",
        "status",
        "outer",
        "inner",
        "factorizations",
        "nlp_solves",
        "comm_global",
        "comm_neighbor",
        "final_kkt",
        "final_consensus",
        "dist_to_ref",
    )
    table = [headers]
    for r in rows:
        table.append(
            (
                r.solver,
                r.status,
                str(r.outer_iterations),
                str(r.inner_iterations),
                str(r.factorizations),
                str(r.nlp_solves),
                str(r.comm_global),
                str(r.comm_neighbor),
                f"{r.final_kkt:.3e}" if r.final_kkt is not None else "n/a",
                f"{r.final_consensus:.3e}" if r.final_consensus is not None else "n/a",
                f"{r.final_dist:.3e}" if r.final_dist is not None else "n/a",
            )
        )
    widths = [max(len(row[c]) for row in table) for c in range(len(headers))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]
    return "\n".join(lines) + "\n"
