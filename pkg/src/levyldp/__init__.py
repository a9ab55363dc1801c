"""
Small-noise SPDEs driven by Poisson jump noise on a spectral Galerkin model:
simulation, the deterministic skeleton equation, the rate function as a
minimum-cost control problem, and Monte Carlo checks of the large-deviation
behaviour.
"""
__version__ = "0.1.0"

from .noise import MarkSpace, NoiseModel, additive, multiplicative, nu_total
from .operators import (DriftOperator, builtin_burgers, builtin_linear,
                        builtin_reaction_diffusion, check_conditions)
from .prm import (Control, JumpStream, girsanov_log_density, restrict_to_admissible,
                  sample_controlled_prm, sample_prm)
from .rate import (RateProblem, TerminalTarget, brute_force_rate, check_sn_membership, cost_lt,
                   ell, minimize_rate)
from .skeleton import continuity_in_control, solve_skeleton, uniqueness_audit
from .spde import monitor_moments, run_ensemble, solve_controlled_spde, solve_spde
from .triple import TripleSpec, norm_h, norm_v, norm_vstar, pairing

__all__ = [
    "MarkSpace", "NoiseModel", "additive", "multiplicative", "nu_total",
    "DriftOperator", "builtin_burgers", "builtin_linear", "builtin_reaction_diffusion",
    "check_conditions",
    "Control", "JumpStream", "girsanov_log_density", "restrict_to_admissible",
    "sample_controlled_prm", "sample_prm",
    "RateProblem", "TerminalTarget", "brute_force_rate", "check_sn_membership", "cost_lt",
    "ell", "minimize_rate",
    "continuity_in_control", "solve_skeleton", "uniqueness_audit",
    "monitor_moments", "run_ensemble", "solve_controlled_spde", "solve_spde",
    "TripleSpec", "norm_h", "norm_v", "norm_vstar", "pairing",
]
