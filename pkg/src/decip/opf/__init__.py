"""Optimal power flow front end: case model, partitioning, problem builder."""

from .build import (
    OpfComparison,
    OpfLayout,
    PartitionError,
    RegionPartition,
    build_opf_subproblems,
    load_partition,
    parse_partition,
    single_region_partition,
    verify_against_oracle,
)
from .case import (
    Branch,
    Bus,
    CaseFormatError,
    Generator,
    GridCase,
    load_case,
    load_matpower_case,
    parse_case,
)

__all__ = [
    "Branch",
    "Bus",
    "CaseFormatError",
    "Generator",
    "GridCase",
    "OpfComparison",
    "OpfLayout",
    "PartitionError",
    "RegionPartition",
    "build_opf_subproblems",
    "load_case",
    "load_matpower_case",
    "load_partition",
    "parse_case",
    "parse_partition",
    "single_region_partition",
    "verify_against_oracle",
]
