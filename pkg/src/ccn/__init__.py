"""Typed coupled cell networks: balanced colorings, admissible fields and synchrony analysis."""

__version__ = "0.1.0"

from .network import (Arrow, Cell, InputIsomorphism, NetworkError, TypedNetwork, doubled_network,
                      input_classes, input_isomorphisms, pullback, validate_network)
from .coloring import (Coloring, brute_force_balanced, enumerate_balanced, in_synchrony_space,
                       is_balanced, is_finer, quotient_network, refine)
from .fields import Field, LocalField, check_admissibility, eval_field, symmetrize
from .dsl import parse_field
from .bumps import build_bump_basis
from .simulate import Trajectory, dense_eval, integrate, quotient_consistency
from .analysis import (constant_pattern_window, detect_phase_shift, pattern_at,
                       pattern_on_interval, periodicity_report, stationary_cells)

__all__ = [
    "Arrow", "Cell", "InputIsomorphism", "NetworkError", "TypedNetwork", "doubled_network",
    "input_classes", "input_isomorphisms", "pullback", "validate_network",
    "Coloring", "brute_force_balanced", "enumerate_balanced", "in_synchrony_space", "is_balanced",
    "is_finer", "quotient_network", "refine",
    "Field", "LocalField", "check_admissibility", "eval_field", "symmetrize",
    "parse_field", "build_bump_basis",
    "Trajectory", "dense_eval", "integrate", "quotient_consistency",
    "constant_pattern_window", "detect_phase_shift", "pattern_at", "pattern_on_interval",
    "periodicity_report", "stationary_cells",
]
