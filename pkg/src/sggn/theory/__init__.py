"""Small-noise expansion of the stochastic-minus-deterministic loss gap and its verifiers."""

from .expansion import (
    compute_R_hat,
    compute_S_hat,
    exact_hessian,
    loss_derivatives,
    phi_product,
    second_derivatives,
    second_order_moments,
    state_jacobians,
)
from .library import SYSTEMS, delta_family, make_system
from .system import ParamSdeSystem, rollout_deterministic, rollout_stochastic, uniform_mesh
from .verify import (
    DeltaBoundResult,
    ExpansionReport,
    LadderError,
    delta_bound_check,
    epsilon_scaling_check,
    monte_carlo_gap,
)

__all__ = [
    "DeltaBoundResult", "ExpansionReport", "LadderError", "ParamSdeSystem", "SYSTEMS",
    "compute_R_hat", "compute_S_hat", "delta_bound_check", "delta_family",
    "epsilon_scaling_check", "exact_hessian", "loss_derivatives", "make_system",
    "monte_carlo_gap", "phi_product", "rollout_deterministic", "rollout_stochastic",
    "second_derivatives", "second_order_moments", "state_jacobians", "uniform_mesh",
]
