"""Speed-up ratios, the R1 stationarity metric and its convergence bound."""
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import BoundUndefined, MetricError, SpecError, SpeedupUndefined
from .models import RunResult


@dataclass(frozen=True)
class TheoryParams:
    d: int
    lam: float
    shots: int
    n_data: int
    iterations: int
    p_tilde_max: float

    def __post_init__(self):
        if self.d < 1 or self.shots < 1 or self.n_data < 1 or self.iterations < 1:
            raise SpecError("d, shots, N_D and T must all be positive")
        if self.lam < 0:
            raise SpecError("lambda must be non-negative")
        if not 0 <= self.p_tilde_max <= 1:
            raise SpecError(f"p~max must lie in [0, 1], got {self.p_tilde_max}")

    @property
    def smoothness(self) -> float:
        """S = (3/2 + lambda) d^2"""
        return (1.5 + self.lam) * self.d ** 2

    @property
    def lipschitz(self) -> float:
        """G = d (1 + 3 pi lambda)"""
        return self.d * (1 + 3 * math.pi * self.lam)

    @property
    def loss_ceiling(self) -> float:
        """Largest possible L(theta_0) - L*: predictions and labels lie in [0, 1], angles in [0, 2 pi)."""
        return 0.5 + 2 * math.pi ** 2 * self.lam * self.d


@dataclass
class ConvergenceRecord:
    converged: bool
    iterations: int
    wall_circuits: int = 0
    final_gradient: Optional[np.ndarray] = None
    grad_norm_sq: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.iterations < 0 or self.wall_circuits < 0:
            raise MetricError("iteration and circuit counts must be non-negative")
        if any(not math.isfinite(v) or v < 0 for v in self.grad_norm_sq):
            raise MetricError("squared gradient norms must be finite and non-negative")


def record_from_run(result: RunResult) -> ConvergenceRecord:
    gradient = np.asarray(result.final_gradient) if result.final_gradient is not None else None
    return ConvergenceRecord(
        converged=result.converged,
        iterations=result.iterations,
        wall_circuits=result.ledger.wall_circuits,
        final_gradient=gradient,
        grad_norm_sq=[row.grad_norm ** 2 for row in result.history if row.grad_norm is not None],
    )


# ============ Speed-up ============

def ideal_speedup(d: int, nodes: int) -> float:
    """(1 + 2d) / (1 + 2d/M)"""
    if d < 1 or nodes < 1:
        raise SpecError("d and M must be positive")
    return (1 + 2 * d) / (1 + 2 * d / nodes)


def _require_converged(*records: ConvergenceRecord) -> None:
    if not all(r.converged for r in records):
        raise SpeedupUndefined("speed-up needs converged runs on both sides")
    if any(r.iterations == 0 for r in records):
        raise SpeedupUndefined("speed-up needs a positive iteration count")


def measured_speedup(single: ConvergenceRecord, parallel: ConvergenceRecord, d: int, nodes: int) -> float:
    """(1 + 2d) N1 / ((1 + 2d/M) NM), circuit counts standing in for time."""
    _require_converged(single, parallel)
    return (1 + 2 * d) * single.iterations / ((1 + 2 * d / nodes) * parallel.iterations)


def wall_proxy_speedup(single: ConvergenceRecord, parallel: ConvergenceRecord) -> float:
    """Ratio of critical-path circuit counts (slowest node per iteration)."""
    _require_converged(single, parallel)
    if single.wall_circuits == 0 or parallel.wall_circuits == 0:
        raise SpeedupUndefined("no circuit counts recorded")
    return single.wall_circuits / parallel.wall_circuits


# ============ R1 ============

def r1_metric(gradients: Sequence[Sequence[float]]) -> float:
    """Mean squared norm of the final-iterate gradient across runs."""
    if len(gradients) == 0:
        raise MetricError("R1 needs at least one run")
    norms = [float(np.dot(g, g)) for g in (np.asarray(v, dtype=np.float64) for v in gradients)]
    return float(np.mean(norms))


def r1_iteration_mean(norms_by_run: Sequence[Sequence[float]]) -> float:
    """Mean over runs of the average squared exact gradient norm over the iterates."""
    runs = [np.asarray(v, dtype=np.float64) for v in norms_by_run if len(v)]
    if not runs:
        raise MetricError("iteration-averaged R1 needs at least one run with exact gradients")
    return float(np.mean([r.mean() for r in runs]))


def _damping(params: TheoryParams) -> float:
    if params.p_tilde_max >= 1:
        raise BoundUndefined("bound diverges at p~max = 1")
    return (1 - params.p_tilde_max) ** 2


def _noise_and_sampling(params: TheoryParams) -> float:
    d, lam, K, p = params.d, params.lam, params.shots, params.p_tilde_max
    damping = _damping(params)
    noise = (2 * params.lipschitz + d) * (2 - p) * p * (1 + 10 * lam) ** 2 / damping
    sampling = (2 * d * K + d) / (2 * params.n_data * K ** 2 * damping)
    return noise + sampling


def r1_upper_bound(params: TheoryParams) -> float:
    optimization = (1 + 9 * math.pi ** 2 * params.lam * params.d) / (2 * params.iterations * _damping(params))
    return optimization + _noise_and_sampling(params)


def descent_bound(params: TheoryParams) -> float:
    """r1_upper_bound with the optimization term replaced by 2 S (L(theta_0) - L*) / T.

    That is the descent-lemma term for eta = 1/S and it bounds the average of ||grad L||^2 over
    the iterates. r1_upper_bound's first term has no S in it, so at p~ = 0 a run from a random
    start can sit above it.
    """
    optimization = 2 * params.smoothness * params.loss_ceiling / (params.iterations * _damping(params))
    return optimization + _noise_and_sampling(params)
