"""Multi-message private computation over a replicated library of linear functions."""

from __future__ import annotations

from .analytics import baseline_rate, gap_check, pc_capacity, rate_point, scheme_rate, sweep, upper_bound
from .audit import find_sign_mapping, structural_audit, transcript_shape_test
from .coding import RedundancyCache, cauchy_mds, stage_matrix, stage_redundancy_basis
from .errors import MmpcError
from .gf import DEFAULT_Q, PrimeField
from .model import DemandSet, MessageLibrary, RandomTape, build_library, random_library, relabel
from .planner import build_query_plan, make_plan, plan_summary, stage_counts
from .protocol import run_protocol

__all__ = [
    "DEFAULT_Q", "DemandSet", "MessageLibrary", "MmpcError", "PrimeField", "RandomTape", "RedundancyCache",
    "baseline_rate", "build_library", "build_query_plan", "cauchy_mds", "find_sign_mapping", "gap_check",
    "make_plan", "pc_capacity", "plan_summary", "random_library", "rate_point", "relabel", "run_protocol",
    "scheme_rate", "stage_counts", "stage_matrix", "stage_redundancy_basis", "structural_audit", "sweep",
    "transcript_shape_test", "upper_bound",
]
