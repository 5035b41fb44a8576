"""Jump-process transport: master equation, random walkers and diffusion limits.

The package builds a jump process from a kernel ``p(delta; x)`` and a rate
``r(x) = 1/tau(x)`` and evolves it three ways: as a lattice master equation,
as an ensemble of continuous-time random walkers, and through its
Kramers-Moyal reduction to a Fick or Fokker-Planck diffusion equation.
"""
from .coefficients import (
    TransportProfile,
    check_resolution,
    detailed_balance_residual,
    km_moment,
    reduce_to_transport,
    truncation_diagnostic,
)
from .errors import (
    ConfigError,
    ConstructionError,
    ConvergenceError,
    DegenerateKernelError,
    FitRejectedError,
    GridMismatchError,
    NumericalError,
    ParameterDomainError,
    ResolutionError,
    StabilityError,
    TransportError,
    UndefinedRatioError,
    ValidationError,
)
from .grid import Grid, LatticeField, interior_mass
from .kernels import (
    DetailedBalanceKernel,
    GaussianKernel,
    JumpKernel,
    RateField,
    ShiftedGaussianKernel,
    SymmetricShape,
    TabulatedKernel,
    TophatKernel,
    TransitionProfile,
    apply_suppression,
    build_detailed_balance_kernel,
    evaluate_kernel,
    interval_walls,
    kernel_from_spec,
    mean_jump_length,
)
from .master_equation import (
    RateMatrix,
    assemble_generator,
    evolve,
    evolve_to_steady,
    slowest_decay_rate,
    slowest_mode,
    step_me,
)
from .pde import (
    BoundaryCondition,
    PdeProblem,
    decay_rate,
    face_flux,
    face_fluxes,
    march,
    steady_state,
    step_pde,
)
from .walkers import (
    EmpiricalProfile,
    WalkerEnsemble,
    estimate_km_from_trajectories,
    load_checkpoint,
    n_fold_convolution,
    propagator_statistics,
    run_walkers,
    save_checkpoint,
    simulate_ctrw,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryCondition",
    "ConfigError",
    "ConstructionError",
    "ConvergenceError",
    "DegenerateKernelError",
    "DetailedBalanceKernel",
    "EmpiricalProfile",
    "FitRejectedError",
    "GaussianKernel",
    "Grid",
    "GridMismatchError",
    "JumpKernel",
    "LatticeField",
    "NumericalError",
    "ParameterDomainError",
    "PdeProblem",
    "RateField",
    "RateMatrix",
    "ResolutionError",
    "ShiftedGaussianKernel",
    "StabilityError",
    "SymmetricShape",
    "TabulatedKernel",
    "TophatKernel",
    "TransitionProfile",
    "TransportError",
    "TransportProfile",
    "UndefinedRatioError",
    "ValidationError",
    "WalkerEnsemble",
    "apply_suppression",
    "assemble_generator",
    "build_detailed_balance_kernel",
    "check_resolution",
    "decay_rate",
    "detailed_balance_residual",
    "estimate_km_from_trajectories",
    "evaluate_kernel",
    "evolve",
    "evolve_to_steady",
    "face_flux",
    "face_fluxes",
    "interior_mass",
    "interval_walls",
    "kernel_from_spec",
    "km_moment",
    "load_checkpoint",
    "march",
    "mean_jump_length",
    "n_fold_convolution",
    "propagator_statistics",
    "reduce_to_transport",
    "run_walkers",
    "save_checkpoint",
    "simulate_ctrw",
    "slowest_decay_rate",
    "slowest_mode",
    "steady_state",
    "step_me",
    "step_pde",
    "truncation_diagnostic",
]
