"""Decentralized interior point solver framework for partially separable NLPs."""

from .dip import (
    ConvergenceTrace,
    OuterResult,
    SolverConfig,
    dip_solve,
    rate_diagnostic,
)
from .oracle import OracleSolution, centralized_ip_solve, schur_spd_check
from .problem import (
    CouplingTopology,
    PartitionedProblem,
    PrimalDualPoint,
    RowSparseMatrix,
    SubsystemPoint,
    SubsystemSpec,
    build_topology,
    consensus_residual,
    validate_problem,
)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceTrace",
    "CouplingTopology",
    "OracleSolution",
    "OuterResult",
    "PartitionedProblem",
    "PrimalDualPoint",
    "RowSparseMatrix",
    "SolverConfig",
    "SubsystemPoint",
    "SubsystemSpec",
    "build_topology",
    "centralized_ip_solve",
    "consensus_residual",
    "dip_solve",
    "rate_diagnostic",
    "schur_spd_check",
    "validate_problem",
    "__version__",
]
