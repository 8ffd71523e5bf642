"""Branching-tree simulation of a reference system coupled to an environment.

The package evolves a total state vector, splits it into path components
whenever a division of the reference-system space satisfies its validity
condition, and checks the resulting descriptions for consistency.
"""

from .branching import BranchTree, grow_tree, path_component, split
from .consistency import (
    allowed_region_test,
    check_principle,
    chi_functional,
    decoherence_matrix,
    nested_prediction_check,
    time_reversed_vector,
)
from .divisions import Division, DivisionSet, basis_division, explicit_division, trivial_division
from .dynamics import PiecewiseSystem, Tolerances, TotalSystem, evolve, leakage
from .entropy import max_entropy_series, tree_entropy, von_neumann_entropy
from .errors import (
    CapacityError,
    ContractViolation,
    DimensionError,
    RefsysError,
    UndefinedConditionError,
    ValidationError,
)
from .linalg import propagator, tensor

__version__ = "0.1.0"

__all__ = [
    "BranchTree", "grow_tree", "path_component", "split",
    "allowed_region_test", "check_principle", "chi_functional", "decoherence_matrix",
    "nested_prediction_check", "time_reversed_vector",
    "Division", "DivisionSet", "basis_division", "explicit_division", "trivial_division",
    "PiecewiseSystem", "Tolerances", "TotalSystem", "evolve", "leakage",
    "max_entropy_series", "tree_entropy", "von_neumann_entropy",
    "CapacityError", "ContractViolation", "DimensionError", "RefsysError",
    "UndefinedConditionError", "ValidationError",
    "propagator", "tensor",
]
