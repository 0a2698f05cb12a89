"""Leapfrog and the symmetrized energy-preserving (divided-difference) map.

The implicit energy-preserving step

    Q_i = q_i + (tau/2) (P + p)^T M^-1 e_i
    P_i = p_i - (tau/2) F_i(Q, q)

is solved by fixed-point iteration, stopping at the first iterate whose
energy error |H(Q, P) - H(q, p)| drops to the tolerance ``delta`` or after
``max_fpi`` updates. Each update substitutes the freshly advanced position
into the force, so it costs exactly one force evaluation; the literal
simultaneous (Jacobi) pairing of the two update lines stalls every other
iterate and doubles the force-evaluation count for the same progress, so the
sequential form is used throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .phase import MassMatrix, PhaseState, hamiltonian

INIT_MODES = ("position-euler", "gradient-euler", "random-perturb")

LEAPFROG_FORCE_EVALS_PER_STEP = 2


@dataclass(frozen=True)
class DmmSolverConfig:
    """Knobs of the implicit energy-preserving step.

    tau: time step (tau == 0 is admitted as the exact identity map).
    delta: absolute per-step energy tolerance.
    max_fpi: cap on fixed-point updates per step.
    dd_guard: base of the relative divided-difference guard; component i uses
        the threshold dd_guard * max(1, |q_i|).
    init_mode: how the initial iterate is built (see ``dmm_fixed_point_init``).
    """

    tau: float
    delta: float = 1e-8
    max_fpi: int = 10
    dd_guard: float = 1e-8
    init_mode: str = "position-euler"

    def __post_init__(self):
        if not (self.tau >= 0.0 and math.isfinite(self.tau)):
            raise ValueError("tau must be finite and >= 0")
        if not (self.delta > 0.0):
            raise ValueError("delta must be positive")
        if self.max_fpi < 1:
            raise ValueError("max_fpi must be >= 1")
        if not (self.dd_guard > 0.0):
            raise ValueError("dd_guard must be positive")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")


@dataclass(frozen=True)
class StepRecord:
    """Outcome of one energy-preserving step.

    ``energy_error`` is the achieved |H_out - H_in| (inf when the solve blew
    up, in which case ``state_out`` is the input state and the caller must
    reject). ``h_out`` carries H(state_out) forward so trajectories never
    re-evaluate the Hamiltonian of a state they already know.
    """

    state_out: PhaseState
    fpi_iterations: int
    energy_error: float
    force_evaluations: int
    converged: bool
    h_out: float = math.nan


def divided_difference_force(Q: np.ndarray, q: np.ndarray, potential, guard: float = 1e-8):
    """Gradient-free force from componentwise divided differences of U.

    Walks the two interleaving substitution paths between q and Q with a
    single scratch vector per path, reusing the previous potential value, so
    a full force costs 2(d + 1) potential evaluations. Components with
    |Q_i - q_i| below the relative guard fall back to the symmetric
    difference across the midpoint of each path (the analytic limit of the
    quotient, still gradient-free).

    Returns (force, n_potential_evaluations). Non-finite potential values
    propagate into the force and are handled by rejection upstream.
    """
    Q = np.asarray(Q, dtype=float)
    q = np.asarray(q, dtype=float)
    d = q.size
    if Q.shape != q.shape:
        raise ValueError("Q and q must have the same shape")
    dq = Q - q
    eps = guard * np.maximum(1.0, np.abs(q))
    x = q.copy()  # ascending substitution path, starts at q
    y = Q.copy()  # descending substitution path, starts at Q
    u_x_prev = float(potential.evaluate(x))
    u_y_prev = float(potential.evaluate(y))
    n_evals = 2
    force = np.empty(d)
    for i in range(d):
        if abs(dq[i]) < eps[i]:
            m = 0.5 * (Q[i] + q[i])
            h = eps[i]
            x[i] = m + 0.5 * h
            u_plus = float(potential.evaluate(x))
            x[i] = m - 0.5 * h
            u_minus = float(potential.evaluate(x))
            y[i] = m + 0.5 * h
            v_plus = float(potential.evaluate(y))
            y[i] = m - 0.5 * h
            v_minus = float(potential.evaluate(y))
            force[i] = (u_plus - u_minus + v_plus - v_minus) / h
            # advance both paths past component i and refresh the running values
            x[i] = Q[i]
            u_x_prev = float(potential.evaluate(x))
            y[i] = q[i]
            u_y_prev = float(potential.evaluate(y))
            n_evals += 6
        else:
            x[i] = Q[i]
            u_x = float(potential.evaluate(x))
            y[i] = q[i]
            u_y = float(potential.evaluate(y))
            force[i] = ((u_x - u_x_prev) + (u_y_prev - u_y)) / dq[i]
            u_x_prev = u_x
            u_y_prev = u_y
            n_evals += 2
    return force, n_evals


def force_and_evals(Q: np.ndarray, q: np.ndarray, potential, guard: float):
    """Closed-form force when the target provides one, else divided differences."""
    if potential.closed_form_force is not None:
        return potential.closed_form_force(Q, q), 0
    return divided_difference_force(Q, q, potential, guard)


def _guarded_position_euler(q, p, tau, mass, dd_guard):
    """Forward-Euler position guess with degenerate components displaced.

    Any component whose proposed displacement is below the guard threshold is
    pushed a full threshold away from q, towards sign(p_i) (+1 when p_i == 0),
    so the divided differences of the first force evaluation stay well posed.
    """
    Q0 = q + tau * mass.inverse_apply(p)
    eps = dd_guard * np.maximum(1.0, np.abs(q))
    small = np.abs(Q0 - q) < eps
    if small.any():
        direction = np.where(p >= 0.0, 1.0, -1.0)
        Q0 = np.where(small, q + direction * eps, Q0)
    return Q0


def dmm_fixed_point_init(
    state: PhaseState,
    cfg: DmmSolverConfig,
    mass: MassMatrix,
    potential,
    rng: Optional[np.random.Generator] = None,
) -> PhaseState:
    """Initial iterate (Q0, P0) for the implicit solve.

    position-euler (default, gradient-free): Q0 = q + tau M^-1 p with the
    divided-difference guard applied, then P0 = p - (tau/2) F(Q0, q).

    gradient-euler: same Q0, momentum half-step from the gradient analogue of
    the force, grad U(Q0) + grad U(q).

    random-perturb: Q0 = q + Uniform(+-10 tau dd_guard) noise, P0 = p.
    """
    q, p = state.q, state.p
    if cfg.init_mode == "random-perturb":
        if rng is None:
            raise ValueError("random-perturb init needs an rng")
        scale = 10.0 * cfg.tau * cfg.dd_guard
        return PhaseState(q + rng.uniform(-scale, scale, size=q.size), p)
    Q0 = _guarded_position_euler(q, p, cfg.tau, mass, cfg.dd_guard)
    if cfg.init_mode == "gradient-euler":
        if potential.gradient is None:
            raise ValueError("gradient-euler init requires a potential gradient")
        g = potential.gradient(Q0) + potential.gradient(q)
        return PhaseState(Q0, p - 0.5 * cfg.tau * g)
    f, _ = force_and_evals(Q0, q, potential, cfg.dd_guard)
    return PhaseState(Q0, p - 0.5 * cfg.tau * f)


def _init_arrays(q, p, cfg, mass, potential, rng):
    """(Q0, P0, force_evaluations) without PhaseState overhead."""
    if cfg.init_mode == "random-perturb":
        if rng is None:
            raise ValueError("random-perturb init needs an rng")
        scale = 10.0 * cfg.tau * cfg.dd_guard
        return q + rng.uniform(-scale, scale, size=q.size), p.copy(), 0
    Q0 = _guarded_position_euler(q, p, cfg.tau, mass, cfg.dd_guard)
    if cfg.init_mode == "gradient-euler":
        if potential.gradient is None:
            raise ValueError("gradient-euler init requires a potential gradient")
        g = potential.gradient(Q0) + potential.gradient(q)
        return Q0, p - 0.5 * cfg.tau * g, 2
    f, _ = force_and_evals(Q0, q, potential, cfg.dd_guard)
    return Q0, p - 0.5 * cfg.tau * f, 1


def dmm_step(
    state: PhaseState,
    potential,
    mass: MassMatrix,
    cfg: DmmSolverConfig,
    rng: Optional[np.random.Generator] = None,
    h_in: Optional[float] = None,
    init_guess: Optional[PhaseState] = None,
) -> StepRecord:
    """One implicit energy-preserving step solved to the energy tolerance.

    The last iterate is returned whether or not the tolerance was met
    (``converged`` records which); an unconverged iterate still enters the
    acceptance ratio through its true energy error. ``init_guess`` overrides
    the configured initialization (used to warm-start reverse solves).
    """
    q, p = state.q, state.p
    if cfg.tau == 0.0:
        h0 = hamiltonian(state, potential, mass).total if h_in is None else h_in
        return StepRecord(state, 0, 0.0, 0, True, h_out=h0)
    if h_in is None:
        h_in = hamiltonian(state, potential, mass).total

    half = 0.5 * cfg.tau
    if init_guess is not None:
        Q, P = init_guess.q, init_guess.p
        force_evals = 0
    else:
        Q, P, force_evals = _init_arrays(q, p, cfg, mass, potential, rng)

    evaluate = potential.evaluate
    kinetic = mass.kinetic
    h_now = float(evaluate(Q)) + kinetic(P)
    err = abs(h_now - h_in)
    iterations = 0
    converged = err <= cfg.delta
    while not converged and iterations < cfg.max_fpi and math.isfinite(err):
        Q = q + half * mass.inverse_apply(P + p)
        f, _ = force_and_evals(Q, q, potential, cfg.dd_guard)
        P = p - half * f
        force_evals += 1
        iterations += 1
        h_now = float(evaluate(Q)) + kinetic(P)
        err = abs(h_now - h_in)
        converged = err <= cfg.delta
    if not math.isfinite(err) or not (np.isfinite(Q).all() and np.isfinite(P).all()):
        return StepRecord(state, iterations, math.inf, force_evals, False, h_out=math.inf)
    return StepRecord(PhaseState(Q, P), iterations, err, force_evals, converged, h_out=h_now)


@dataclass(frozen=True)
class TrajectoryRecord:
    """Aggregated outcome of an N-step trajectory.

    ``total_energy_error`` sums the per-step |dH| for the energy-preserving
    map (bounded by N delta when every step converged); for leapfrog it is
    the endpoint |H_out - H_in|. A failed trajectory reports h_out = +inf and
    leaves ``state_out`` at the last valid state.
    """

    state_out: PhaseState
    n_steps: int
    total_force_evaluations: int
    total_fpi_iterations: int
    total_energy_error: float
    all_converged: bool
    failed: bool
    h_in: float
    h_out: float


def trajectory(
    state: PhaseState,
    potential,
    mass: MassMatrix,
    cfg: DmmSolverConfig,
    n_steps: int,
    per_step_hook: Optional[Callable[[np.ndarray, np.ndarray], None]] = None,
    rng: Optional[np.random.Generator] = None,
) -> TrajectoryRecord:
    """Compose ``n_steps`` energy-preserving steps, threading H forward.

    ``per_step_hook`` is invoked after each step with the step's (q_in, q_out)
    position pair so per-step Jacobian factors can be accumulated into the
    N-step product.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    h_in = hamiltonian(state, potential, mass).total
    current = state
    h = h_in
    total_f = 0
    total_it = 0
    total_err = 0.0
    all_converged = True
    for _ in range(n_steps):
        rec = dmm_step(current, potential, mass, cfg, rng=rng, h_in=h)
        total_f += rec.force_evaluations
        total_it += rec.fpi_iterations
        if not math.isfinite(rec.energy_error):
            return TrajectoryRecord(
                current, n_steps, total_f, total_it, math.inf, False, True, h_in, math.inf
            )
        total_err += rec.energy_error
        all_converged = all_converged and rec.converged
        if per_step_hook is not None:
            per_step_hook(current.q, rec.state_out.q)
        current = rec.state_out
        h = rec.h_out
    return TrajectoryRecord(
        current, n_steps, total_f, total_it, total_err, all_converged, False, h_in, h
    )


def leapfrog_step(state: PhaseState, potential, mass: MassMatrix, tau: float) -> PhaseState:
    """One kick-drift-kick update; exactly two gradient evaluations, no caching."""
    if potential.gradient is None:
        raise ValueError("leapfrog requires a potential gradient")
    q, p = state.q, state.p
    p_half = p - 0.5 * tau * potential.gradient(q)
    q_new = q + tau * mass.inverse_apply(p_half)
    p_new = p_half - 0.5 * tau * potential.gradient(q_new)
    return PhaseState(q_new, p_new)


def leapfrog_trajectory(
    state: PhaseState,
    potential,
    mass: MassMatrix,
    tau: float,
    n_steps: int,
    per_step_hook: Optional[Callable[[np.ndarray, np.ndarray], None]] = None,
) -> TrajectoryRecord:
    """Compose ``n_steps`` leapfrog steps (2 gradient evaluations each).

    A trajectory that leaves the finite range (steep targets can blow up the
    explicit update) is flagged failed for automatic rejection upstream.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if potential.gradient is None:
        raise ValueError("leapfrog requires a potential gradient")
    h_in = hamiltonian(state, potential, mass).total
    grad = potential.gradient
    q, p = state.q, state.p
    total_f = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(n_steps):
            q_prev = q
            p_half = p - 0.5 * tau * grad(q)
            q = q + tau * mass.inverse_apply(p_half)
            p = p_half - 0.5 * tau * grad(q)
            total_f += LEAPFROG_FORCE_EVALS_PER_STEP
            if per_step_hook is not None:
                per_step_hook(q_prev, q)
        if not (np.isfinite(q).all() and np.isfinite(p).all()):
            return TrajectoryRecord(
                state, n_steps, total_f, 0, math.inf, True, True, h_in, math.inf
            )
        out = PhaseState(q, p)
        u_out = float(potential.evaluate(out.q))
        h_out = (math.inf if not math.isfinite(u_out) else u_out) + mass.kinetic(out.p)
    if not math.isfinite(h_out):
        return TrajectoryRecord(state, n_steps, total_f, 0, math.inf, True, True, h_in, math.inf)
    return TrajectoryRecord(
        out, n_steps, total_f, 0, abs(h_out - h_in), True, False, h_in, h_out
    )
