"""Cologne: declarative constraint optimization over distributed system state.

A Datalog dialect with goal/var declarations and solver rules, compiled onto
an incremental evaluation engine fused with a finite-domain branch-and-bound
solver, runnable centralized or across simulated networked nodes.
"""

from .analysis import (
    AnnotatedProgram,
    ExecBucket,
    LocalizedProgram,
    RuleClass,
    analyze,
    check_safety,
    classify_rules,
    infer_solver_tables,
    localize_program,
    register_program,
)
from .checks import Diagnostic, check_program
from .datalog import Delta, Store, Tup
from .parser import CologSyntaxError, Fact, parse_facts, parse_program
from .solver import Model, SolveStatus, Solution, solve

__all__ = [
    "AnnotatedProgram",
    "CologSyntaxError",
    "Delta",
    "Diagnostic",
    "ExecBucket",
    "Fact",
    "LocalizedProgram",
    "Model",
    "RuleClass",
    "SolveStatus",
    "Solution",
    "Store",
    "Tup",
    "analyze",
    "check_program",
    "check_safety",
    "classify_rules",
    "infer_solver_tables",
    "localize_program",
    "parse_facts",
    "parse_program",
    "register_program",
    "solve",
]
