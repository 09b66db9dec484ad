"""Exact simulation and large-deviation tools for k-nary jump particle systems."""
__version__ = "0.1.0"

from .measures import (
    BoundViolation, ConsistencyError, EmpiricalMeasure, SystemState, TestFunction, YoungDecomposition,
    kappa_enumerate, kappa_integrate, tensor_power_integrate, young_decompose_check, young_gap, young_schemes,
)
from .kernels import (
    COAG, COLLIDE, FRAG, BeckerDoringKernel, ConditionReport, CountKernel, JumpFunction, Jumps,
    KacBoltzmannKernel, Kernel, KernelSignature, PairKernel, SmoluchowskiKernel, TableKernel, TiltFunction,
    bd_kernel, check_conditions, cutoff, increment, kac_kernel, kernel_norm_tensor, kind_indicator,
    smoluchowski_kernel, table_kernel, tilt_eta, tilt_f, zero_kernel,
)
from .ldp import (
    PreconditionError, RateEvaluation, TestFunctionPath, bd_eta_alternative, bd_tilted_rhs, gamma_functional,
    initial_rate, integral_functional, legendre_check, r_lower_given_eta, r_upper_estimate, tau, tau_star,
)
from .hydro import (
    GelationBound, HydroSolution, NumericalError, gelation_horizon, path_jump_integral, reference_solution,
    solve_bd, solve_kernel, solve_smoluchowski, weak_form_residual,
)
from .simulate import (
    ConfigurationError, Ensemble, JumpEvent, SimulationConfig, Trajectory, compensated_integral,
    compensator_integral, counting_integral, covariance_check, exponential_martingale, f_tilt_log_rnd,
    log_exponential_martingale, relative_entropy_estimate, reweighted_expectation, run_ensemble, sample_initial,
    simulate,
)
