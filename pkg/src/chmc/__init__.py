"""Conservative Hamiltonian Monte Carlo with energy-preserving proposals.

Public surface: phase-space primitives, built-in targets, the leapfrog and
energy-preserving integrators, Jacobian determinant factors, the two
samplers, streaming diagnostics, and the config-driven experiment runner in
``chmc.cli``.
"""

from .diagnostics import (
    ChainSummary,
    CovarianceTracker,
    StreamingCovariance,
    covariance_error,
    finalize_summary,
)
from .integrators import (
    DmmSolverConfig,
    StepRecord,
    TrajectoryRecord,
    divided_difference_force,
    dmm_fixed_point_init,
    dmm_step,
    leapfrog_step,
    leapfrog_trajectory,
    trajectory,
)
from .jacobian import (
    JacobianAccumulator,
    JacobianMode,
    StepJacobian,
    force_jacobians,
    step_jacobian,
    trajectory_jacobian,
)
from .phase import (
    HamiltonianValue,
    MassMatrix,
    PhaseState,
    hamiltonian,
    negate_momentum,
    sample_momentum,
)
from .samplers import (
    IterationOutcome,
    SamplerConfig,
    acceptance_probability,
    chain_rng,
    chmc_iteration,
    hmc_iteration,
    run_chain,
)
from .targets import (
    MultivariateGaussian,
    Potential,
    QuarticGeneralizedGaussian,
    quartic_target_variance,
)

__version__ = "0.1.0"

__all__ = [
    "ChainSummary",
    "CovarianceTracker",
    "DmmSolverConfig",
    "HamiltonianValue",
    "IterationOutcome",
    "JacobianAccumulator",
    "JacobianMode",
    "MassMatrix",
    "MultivariateGaussian",
    "PhaseState",
    "Potential",
    "QuarticGeneralizedGaussian",
    "SamplerConfig",
    "StepJacobian",
    "StepRecord",
    "StreamingCovariance",
    "TrajectoryRecord",
    "acceptance_probability",
    "chain_rng",
    "chmc_iteration",
    "covariance_error",
    "divided_difference_force",
    "dmm_fixed_point_init",
    "dmm_step",
    "finalize_summary",
    "force_jacobians",
    "hamiltonian",
    "hmc_iteration",
    "leapfrog_step",
    "leapfrog_trajectory",
    "negate_momentum",
    "quartic_target_variance",
    "run_chain",
    "sample_momentum",
    "step_jacobian",
    "trajectory",
    "trajectory_jacobian",
    "__version__",
]
