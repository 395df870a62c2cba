"""AIRG reduction multigrid for streaming transport operators."""
from .coarsening import CfLabels, StrengthGraph, ddc, pmis, pmisr, strength
from .gmres_poly import (
    GmresPolynomial,
    apply_polynomial,
    assemble_fixed_sparsity,
    compute_coefficients,
)
from .hierarchy import CoarseningStall, Hierarchy, SetupConfig, setup
from .parallel_model import locality_ratio, partition_rows, replay_triggers
from .solve import SolveConfig, SolveStats, richardson_solve, vcycle
from .sparse import C_POINT, F_POINT, SparseMatrix, spgemm, spmv
from .transport import StreamingProblem, generate_mesh, streaming_problem

__version__ = "0.1.0"

__all__ = [
    "C_POINT",
    "F_POINT",
    "CfLabels",
    "CoarseningStall",
    "GmresPolynomial",
    "Hierarchy",
    "SetupConfig",
    "SolveConfig",
    "SolveStats",
    "SparseMatrix",
    "StrengthGraph",
    "StreamingProblem",
    "apply_polynomial",
    "assemble_fixed_sparsity",
    "compute_coefficients",
    "ddc",
    "generate_mesh",
    "locality_ratio",
    "partition_rows",
    "pmis",
    "pmisr",
    "replay_triggers",
    "richardson_solve",
    "setup",
    "spgemm",
    "spmv",
    "streaming_problem",
    "strength",
    "vcycle",
]
