"""The two Markov chains: leapfrog HMC and the conservative sampler.

Both follow the same outer loop: refresh the momentum from N(0, M), integrate
N steps, and accept the proposed position with probability
min(1, exp(-dH) * J) where J is 1 for leapfrog (volume preserving) and the
N-step determinant product for the energy-preserving map. Momentum is
discarded after every iteration and never negated on rejection, so exactly
one uniform draw is consumed per iteration regardless of the outcome, keeping
RNG streams aligned across method variants for paired comparisons.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .diagnostics import ChainSummary, CovarianceTracker, finalize_summary
from .integrators import DmmSolverConfig, leapfrog_trajectory, trajectory
from .jacobian import JacobianAccumulator, JacobianMode
from .phase import MassMatrix, PhaseState

METHODS = ("hmc-leapfrog", "chmc")
INITIAL_STATE_MODES = ("zeros", "standard-normal", "explicit")


@dataclass(frozen=True)
class SamplerConfig:
    """Full specification of one chain.

    ``n_steps`` is fixed by the pair (total_time, tau): the ratio must be an
    integer to 1e-9 or construction fails. For the conservative sampler,
    ``solver`` carries the fixed-point knobs and must agree with ``tau``;
    ``jacobian_mode`` picks J0 (default, gradient-free), J1 or JFull.
    """

    method: str
    tau: float
    total_time: float
    iterations: int
    burn_in: int = 0
    seed: int = 0
    jacobian_mode: Optional[JacobianMode] = None
    solver: Optional[DmmSolverConfig] = None
    initial_state_mode: str = "standard-normal"
    initial_state: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not (self.tau > 0.0 and math.isfinite(self.tau)):
            raise ValueError("tau must be finite and positive")
        if not (self.total_time > 0.0 and math.isfinite(self.total_time)):
            raise ValueError("total_time must be finite and positive")
        ratio = self.total_time / self.tau
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("n_steps not integral: total_time / tau must be a positive integer")
        if self.burn_in < 0 or self.iterations <= self.burn_in:
            raise ValueError("need iterations > burn_in >= 0")
        if self.initial_state_mode not in INITIAL_STATE_MODES:
            raise ValueError(f"initial_state_mode must be one of {INITIAL_STATE_MODES}")
        if self.initial_state_mode == "explicit" and self.initial_state is None:
            raise ValueError("explicit initial state requires a vector")
        if self.method == "chmc":
            solver = self.solver if self.solver is not None else DmmSolverConfig(tau=self.tau)
            if solver.tau != self.tau:
                raise ValueError("solver.tau must equal the sampler tau")
            object.__setattr__(self, "solver", solver)
            mode = self.jacobian_mode if self.jacobian_mode is not None else JacobianMode.j0()
            object.__setattr__(self, "jacobian_mode", mode)

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.tau))


@dataclass(frozen=True)
class IterationOutcome:
    """Per-iteration record streamed to diagnostics sinks.

    ``delta_H`` is the proposal's H(q*, p*) - H(q0, p0) (+inf on trajectory
    failure). ``force_evals`` counts integrator force evaluations only;
    Jacobian finite-difference probes are tallied separately in
    ``jacobian_force_evals``.
    """

    accepted: bool
    alpha: float
    delta_H: float
    jacobian_product: float
    force_evals: int
    fpi_iterations_total: int
    all_steps_converged: bool = True
    jacobian_force_evals: int = 0


def acceptance_probability(delta_h: float, jacobian_product: float) -> float:
    """min(1, exp(-dH) * J), computed in log space.

    Total function: J <= 0 (or NaN) and dH = +inf (or NaN) both force 0.
    """
    if math.isnan(jacobian_product) or jacobian_product <= 0.0:
        return 0.0
    if math.isnan(delta_h) or (math.isinf(delta_h) and delta_h > 0):
        return 0.0
    log_alpha = -delta_h + math.log(jacobian_product)
    if log_alpha >= 0.0:
        return 1.0
    return math.exp(log_alpha)


def chmc_iteration(theta: np.ndarray, target, mass: MassMatrix, cfg: SamplerConfig,
                   rng: np.random.Generator):
    """One conservative-sampler iteration: refresh p, integrate, accept/reject."""
    p0 = mass.sample_momentum(rng)
    state = PhaseState(theta, p0)
    mode = cfg.jacobian_mode
    accumulator = None
    hook = None
    if mode.kind != "J0":
        accumulator = JacobianAccumulator(mode, cfg.tau, mass, target, cfg.solver.dd_guard)
        hook = accumulator
    rec = trajectory(state, target, mass, cfg.solver, cfg.n_steps,
                     per_step_hook=hook, rng=rng)
    u = rng.random()
    jacobian_product = accumulator.product if accumulator is not None else 1.0
    jacobian_evals = accumulator.extra_force_evals if accumulator is not None else 0
    if rec.failed:
        outcome = IterationOutcome(False, 0.0, math.inf, jacobian_product,
                                   rec.total_force_evaluations, rec.total_fpi_iterations,
                                   False, jacobian_evals)
        return theta, outcome
    delta_h = rec.h_out - rec.h_in
    alpha = acceptance_probability(delta_h, jacobian_product)
    accepted = u < alpha
    new_theta = rec.state_out.q if accepted else theta
    outcome = IterationOutcome(accepted, alpha, delta_h, jacobian_product,
                               rec.total_force_evaluations, rec.total_fpi_iterations,
                               rec.all_converged, jacobian_evals)
    return new_theta, outcome


def hmc_iteration(theta: np.ndarray, target, mass: MassMatrix, cfg: SamplerConfig,
                  rng: np.random.Generator):
    """One leapfrog-HMC iteration; the proposal map is volume preserving (J = 1)."""
    p0 = mass.sample_momentum(rng)
    state = PhaseState(theta, p0)
    rec = leapfrog_trajectory(state, target, mass, cfg.tau, cfg.n_steps)
    u = rng.random()
    if rec.failed:
        outcome = IterationOutcome(False, 0.0, math.inf, 1.0,
                                   rec.total_force_evaluations, 0, True, 0)
        return theta, outcome
    delta_h = rec.h_out - rec.h_in
    alpha = acceptance_probability(delta_h, 1.0)
    accepted = u < alpha
    new_theta = rec.state_out.q if accepted else theta
    outcome = IterationOutcome(accepted, alpha, delta_h, 1.0,
                               rec.total_force_evaluations, 0, True, 0)
    return new_theta, outcome


def chain_rng(seed: int, chain_index: int) -> np.random.Generator:
    """Per-chain generator from a splittable seed scheme (seed, chain index)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(chain_index,)))


def initial_position(cfg: SamplerConfig, dim: int, rng: np.random.Generator) -> np.ndarray:
    if cfg.initial_state_mode == "zeros":
        return np.zeros(dim)
    if cfg.initial_state_mode == "explicit":
        theta = np.array(cfg.initial_state, dtype=float, copy=True, ndmin=1)
        if theta.size != dim:
            raise ValueError("explicit initial state has the wrong dimension")
        return theta
    return rng.standard_normal(dim)


def run_chain(
    cfg: SamplerConfig,
    target,
    mass: MassMatrix,
    sinks=(),
    chain_index: int = 0,
    covariance_tracker: Optional[CovarianceTracker] = None,
) -> ChainSummary:
    """Run one chain to completion, streaming outcomes and retained samples.

    Sinks are callables ``sink(iteration, outcome, theta_or_None)``; theta is
    passed only for retained (post burn-in) iterations so samples never need
    to be stored. Identical (seed, config, target) give bit-identical output.
    """
    rng = chain_rng(cfg.seed, chain_index)
    iterate = chmc_iteration if cfg.method == "chmc" else hmc_iteration
    theta = initial_position(cfg, target.dim, rng)
    outcomes = []
    start = time.perf_counter()
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(cfg.iterations):
            theta, outcome = iterate(theta, target, mass, cfg, rng)
            outcomes.append(outcome)
            retained = i >= cfg.burn_in
            if retained and covariance_tracker is not None:
                covariance_tracker.update(i, theta)
            for sink in sinks:
                sink(i, outcome, theta if retained else None)
    wall = time.perf_counter() - start
    trace = covariance_tracker.trace if covariance_tracker is not None else []
    return finalize_summary(outcomes, wall, cfg.n_steps, covariance_error_trace=trace)
