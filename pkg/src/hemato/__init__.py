"""Simulation and numerical verification toolkit for a hybrid model of
hematopoiesis with a switching cancer stem cell."""
from .model import (Box, HybridState, ModelParams, generator_apply, hormander_rank,
                    invariant_box, jacobian, lie_bracket_01, rate_functions, reference_params,
                    scaled_rate_functions, vector_field, divergence_2d)
from .equilibrium import EquilibriumPoint, FlowSegment, flow, orbit_compose, sample_accessible, solve_equilibrium
from .pdmp import PdmpTrajectory, ensemble_pdmp, sample_at, simulate_pdmp
from .ssa import JumpState, event_rates, simulate_ssa, simulate_tau_leap

__version__ = "0.1.0"
