"""Generalized-droop lossy microgrid modelling, small-signal certificates and transient simulation."""
__version__ = "0.1.0"

from .case_io import Bus, Case, CaseError, builtin_case, builtin_reference_state, gen_lossy_variant, load_case
from .dynamics import ModelMatrices, State, build_model, rhs, select_alpha
from .equilibrium import Equilibrium, EquilibriumError, calibrate_references, solve_equilibrium
from .netgraph import Line, NetworkError, build_ybus, incidence
from .simulate import DisturbanceSpec, Trajectory, integrate, settling_times, sweep
from .smallsignal import SmallSignal, assemble_jacobian, coupling_measure
from .stability import StabilityReport, analyze, certify, check_assumptions, spectrum

__all__ = [
    "Bus", "Case", "CaseError", "builtin_case", "builtin_reference_state", "gen_lossy_variant", "load_case",
    "ModelMatrices", "State", "build_model", "rhs", "select_alpha",
    "Equilibrium", "EquilibriumError", "calibrate_references", "solve_equilibrium",
    "Line", "NetworkError", "build_ybus", "incidence",
    "DisturbanceSpec", "Trajectory", "integrate", "settling_times", "sweep",
    "SmallSignal", "assemble_jacobian", "coupling_measure",
    "StabilityReport", "analyze", "certify", "check_assumptions", "spectrum",
]
