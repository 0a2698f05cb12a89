"""Streaming statistics: online covariance, error traces, chain summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class StreamingCovariance:
    """Single-pass mean/covariance accumulator (Welford update, Chan merge).

    Full mode keeps the d x d co-moment matrix; diagonal mode keeps only the
    length-d second-moment vector, which is what very high-dimensional runs
    use (a 40960^2 matrix would not fit in memory).
    """

    def __init__(self, dim: int, diagonal: bool = False):
        self.dim = int(dim)
        self.diagonal = bool(diagonal)
        self.count = 0
        self.mean = np.zeros(self.dim)
        self.scatter = np.zeros(self.dim) if self.diagonal else np.zeros((self.dim, self.dim))

    def update(self, x: np.ndarray) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        delta2 = x - self.mean
        if self.diagonal:
            self.scatter += delta * delta2
        else:
            self.scatter += np.outer(delta, delta2)

    def merge(self, other: "StreamingCovariance") -> "StreamingCovariance":
        """Combine two independent streams; equals single-stream processing."""
        if self.dim != other.dim or self.diagonal != other.diagonal:
            raise ValueError("streams must have identical shape and mode")
        out = StreamingCovariance(self.dim, self.diagonal)
        n = self.count + other.count
        if n == 0:
            return out
        d = other.mean - self.mean
        w = self.count * other.count / n
        out.count = n
        out.mean = self.mean + d * (other.count / n)
        if self.diagonal:
            out.scatter = self.scatter + other.scatter + w * d * d
        else:
            out.scatter = self.scatter + other.scatter + w * np.outer(d, d)
        return out

    def covariance(self) -> np.ndarray:
        """Sample covariance with n - 1 normalization (full mode)."""
        if self.diagonal:
            raise ValueError("diagonal stream has no full covariance")
        if self.count < 2:
            raise ValueError("need at least two samples")
        return self.scatter / (self.count - 1)

    def variance_diagonal(self) -> np.ndarray:
        """Per-component sample variance with n - 1 normalization."""
        if self.count < 2:
            raise ValueError("need at least two samples")
        if self.diagonal:
            return self.scatter / (self.count - 1)
        return np.diag(self.scatter) / (self.count - 1)


def _target_diagonal(target_cov, dim: int) -> np.ndarray:
    t = np.asarray(target_cov, dtype=float)
    if t.ndim == 0:
        return np.full(dim, float(t))
    if t.ndim == 1:
        return t
    return np.diag(t)


def _target_matrix(target_cov, dim: int) -> np.ndarray:
    t = np.asarray(target_cov, dtype=float)
    if t.ndim == 0:
        return float(t) * np.eye(dim)
    if t.ndim == 1:
        return np.diag(t)
    return t


def covariance_error(stream: StreamingCovariance, target_cov) -> float:
    """l-infinity deviation of the sample covariance from the target.

    ``target_cov`` may be a scalar (isotropic), a length-d vector (diagonal)
    or a full d x d matrix. Full streams compare entrywise over the whole
    matrix; diagonal streams compare diagonal entries only.
    """
    if stream.count < 2:
        raise ValueError("need at least two samples")
    if stream.diagonal:
        return float(np.max(np.abs(stream.variance_diagonal() - _target_diagonal(target_cov, stream.dim))))
    return float(np.max(np.abs(stream.covariance() - _target_matrix(target_cov, stream.dim))))


class CovarianceTracker:
    """Streams retained samples and records an error trace every few updates.

    The trace holds (iteration, l-infinity covariance error) pairs at a fixed
    stride so long runs produce plot-ready curves, not per-iteration dumps.
    """

    def __init__(self, dim: int, target_cov, diagonal: bool = False, record_stride: int = 10):
        if record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        self.stream = StreamingCovariance(dim, diagonal=diagonal)
        self.target_cov = target_cov
        self.record_stride = record_stride
        self.trace: list[tuple[int, float]] = []

    def update(self, iteration: int, theta: np.ndarray) -> None:
        self.stream.update(theta)
        if self.stream.count >= 2 and self.stream.count % self.record_stride == 0:
            self.trace.append((iteration, covariance_error(self.stream, self.target_cov)))

    def last_recorded(self, iteration: int):
        """Error recorded at exactly this iteration, else None."""
        if self.trace and self.trace[-1][0] == iteration:
            return self.trace[-1][1]
        return None


@dataclass
class ChainSummary:
    """Per-chain reduction of the iteration stream.

    mean_energy_error averages the proposal's |dH| over all iterations,
    accepted or not; mean_force_evals divides total integrator force
    evaluations by iterations * n_steps.
    """

    mean_acceptance_pct: float
    mean_energy_error: float
    mean_force_evals: float
    wall_time_seconds: float
    covariance_error_trace: list = field(default_factory=list)
    iterations: int = 0
    accepted: int = 0


def finalize_summary(outcomes, wall_time_seconds: float, n_steps: int,
                     covariance_error_trace=None) -> ChainSummary:
    """Reduce a finished iteration stream into the reported table quantities."""
    outcomes = list(outcomes)
    n = len(outcomes)
    if n == 0:
        raise ValueError("cannot summarize an empty chain")
    accepted = sum(1 for o in outcomes if o.accepted)
    energy = math.fsum(abs(o.delta_H) for o in outcomes) / n
    force = math.fsum(o.force_evals for o in outcomes) / (n * n_steps)
    return ChainSummary(
        mean_acceptance_pct=100.0 * accepted / n,
        mean_energy_error=energy,
        mean_force_evals=force,
        wall_time_seconds=wall_time_seconds,
        covariance_error_trace=list(covariance_error_trace or []),
        iterations=n,
        accepted=accepted,
    )
