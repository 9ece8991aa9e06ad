"""Orthogonal (multiplicative) and additive sequential editing of linear associative memories."""

from .editors import EDITORS, EditorSpec, additive_edit, mose_edit, run_sequential
from .linalg import OrthogonalMatrix, condition_number, random_orthogonal
from .memory import EditBatch, MemoryModel, build_memory, make_edit_stream, make_eval_suite
from .metrics import MetricsReport, evaluate
from .procrustes import EditConfig, assemble, solve

__version__ = "0.1.0"

__all__ = [
    "EDITORS",
    "EditBatch",
    "EditConfig",
    "EditorSpec",
    "MemoryModel",
    "MetricsReport",
    "OrthogonalMatrix",
    "additive_edit",
    "assemble",
    "build_memory",
    "condition_number",
    "evaluate",
    "make_edit_stream",
    "make_eval_suite",
    "mose_edit",
    "random_orthogonal",
    "run_sequential",
    "solve",
]
