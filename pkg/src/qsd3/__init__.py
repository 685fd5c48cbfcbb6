"""Trajectory and master-equation toolkit for a dissipative three-level ladder.

The package simulates a ladder-type three-level system coupled to a
zero-temperature environment with an exponentially decaying (complex
Ornstein-Uhlenbeck) correlation function, four ways:

* linear quantum-state-diffusion trajectories driven by colored complex
  Gaussian noise, ensemble-averaged into the reduced density matrix;
* the positivity-preserving approximated master equation those trajectories
  unravel exactly;
* the non-positivity-preserving comparison master equation (the same
  truncation applied directly to the exact equation of motion);
* an exact reference obtained from a single damped auxiliary bosonic mode.

See the individual modules for the constructions and ``qsd3.cli`` for the
preset experiments.
"""

__version__ = "0.1.0"

from .coeff import (CoefficientPath, FirstOrderKernels, KernelGrid,
                    integrate_coefficients, integrate_f1g1, integrate_kernel_grid)
from .core import (BathSpec, DensityPath, NonFiniteError, SystemSpec, TimeGrid,
                   basis_state, commutator, hermitian_eigenvalues, level_populations,
                   min_eigenvalue, projector, three_level_ops, three_level_system)
from .meq import integrate_npp_me, integrate_pp_me, positivity_report, write_density_csv
from .noise import CovarianceEstimate, NoisePath, derive_seeds, estimate_covariance, sample_noise_path
from .pseudomode import (PseudomodeConfig, TruncationReport, check_truncation,
                         integrate_reference, mode_two_time_function)
from .qsd import (EnsembleResult, NovikovReport, TrajectoryPath, ensemble_density,
                  propagate_trajectories, propagate_trajectory, run_ensemble,
                  validate_novikov)

__all__ = [
    "__version__",
    "BathSpec", "CoefficientPath", "CovarianceEstimate", "DensityPath",
    "EnsembleResult", "FirstOrderKernels", "KernelGrid", "NoisePath",
    "NonFiniteError", "NovikovReport", "PseudomodeConfig", "SystemSpec",
    "TimeGrid", "TrajectoryPath", "TruncationReport",
    "basis_state", "check_truncation", "commutator", "derive_seeds",
    "ensemble_density", "estimate_covariance", "hermitian_eigenvalues",
    "integrate_coefficients", "integrate_f1g1", "integrate_kernel_grid",
    "integrate_npp_me", "integrate_pp_me", "integrate_reference",
    "level_populations", "min_eigenvalue", "mode_two_time_function",
    "positivity_report", "projector", "propagate_trajectories",
    "propagate_trajectory", "run_ensemble",
    "sample_noise_path", "three_level_ops", "three_level_system",
    "validate_novikov", "write_density_csv",
]
