"""Chordal decomposition plus facial reduction pre-processing for SDPs."""
from .problem import SdpProblem, SolverResult, Status, SymSparseMatrix, evaluate, parse_sdpa, read_sdpa, write_sdpa

__all__ = [
    "SdpProblem",
    "SolverResult",
    "Status",
    "SymSparseMatrix",
    "evaluate",
    "parse_sdpa",
    "read_sdpa",
    "write_sdpa",
]
