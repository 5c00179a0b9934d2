"""Parameter-shift gradients of the regularized MSE loss."""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .classifier import mse_loss, predict
from .engine import (
    CircuitSpec, DensityMatrix, Observable, amplitude_encode, expectation,
    merged_depolarizing_prob, run_circuit,
)
from .errors import BatchError, OracleModeError, SpecError
from .models import NoiseMode, NoiseProfile

logger = logging.getLogger(__name__)

SHIFT = np.pi / 2
FORWARD = 0

SeedPrefix = Union[None, int, Sequence[int]]


@dataclass(frozen=True)
class Batch:
    states: Tuple[DensityMatrix, ...]
    labels: np.ndarray
    keys: Tuple[int, ...] = ()  # dataset indices, used to derive shot seeds

    def __post_init__(self):
        if len(self.states) != len(self.labels):
            raise BatchError(f"{len(self.states)} states for {len(self.labels)} labels")
        if not self.keys:
            object.__setattr__(self, "keys", tuple(range(len(self.states))))

    def __len__(self) -> int:
        return len(self.states)

    @classmethod
    def from_features(cls, features, labels, keys: Sequence[int] = ()) -> "Batch":
        states = tuple(amplitude_encode(x) for x in np.asarray(features, dtype=np.float64))
        return cls(states, np.asarray(labels, dtype=np.float64), tuple(keys))


@dataclass
class GradientVector:
    values: np.ndarray
    circuit_executions: int
    components: Tuple[int, ...] = ()

    def on(self, indices: Sequence[int]) -> np.ndarray:
        return self.values[list(indices)]


@dataclass
class BiasDecomposition:
    clean: np.ndarray
    noisy_mean: np.ndarray
    noisy_analytic: np.ndarray
    implied_bias: np.ndarray
    shot_variance: np.ndarray
    standard_error: np.ndarray
    p_tilde: float
    repetitions: int
    regularizer: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def scaled_clean(self) -> np.ndarray:
        """(1 - p~)^2 times the data part of the clean gradient, plus the regularizer."""
        scale = (1.0 - self.p_tilde) ** 2
        return scale * (self.clean - self.regularizer) + self.regularizer


def seed_stream(prefix: SeedPrefix, *keys: int) -> Optional[np.random.SeedSequence]:
    if prefix is None:
        return None
    head = (prefix,) if isinstance(prefix, (int, np.integer)) else tuple(prefix)
    return np.random.SeedSequence([int(v) for v in (*head, *keys)])


def effective_depolarizing_prob(spec: CircuitSpec, profile: Optional[NoiseProfile]) -> float:
    """Merged-channel strength; for per-gate noise, the merged-depth approximation."""
    if profile is None or spec.noise_mode == NoiseMode.none:
        return 0.0
    return merged_depolarizing_prob(profile.p1, spec.merged_depth)


def shift_rule_derivative(
    spec: CircuitSpec,
    state: DensityMatrix,
    params: Sequence[float],
    index: int,
    observable: Optional[Observable] = None,
    profile: Optional[NoiseProfile] = None,
) -> float:
    """d<O>/d theta_index from two circuits shifted by +-pi/2 (analytic expectations)."""
    observable = observable or Observable.z_parity(spec.n_qubits)
    theta = np.asarray(params, dtype=np.float64)
    plus, minus = theta.copy(), theta.copy()
    plus[index] += SHIFT
    minus[index] -= SHIFT
    up = expectation(run_circuit(spec, state, plus, profile), observable)
    down = expectation(run_circuit(spec, state, minus, profile), observable)
    return 0.5 * (up - down)


def parameter_shift_gradient(
    spec: CircuitSpec,
    batch: Batch,
    params: Sequence[float],
    components: Optional[Sequence[int]] = None,
    profile: Optional[NoiseProfile] = None,
    shots: Optional[int] = None,
    seed: SeedPrefix = None,
    lam: float = 0.0,
    observable: Optional[Observable] = None,
) -> GradientVector:
    """Gradient of the MSE loss on `components`; zero elsewhere.

    Shot seeds are derived from (seed..., example key, shift code) so the result
    does not depend on which worker runs which slice or in what order.
    """
    if len(batch) == 0:
        raise BatchError("empty batch")
    theta = np.asarray(params, dtype=np.float64)
    d = theta.size
    components = tuple(range(d)) if components is None else tuple(components)
    if any(not 0 <= j < d for j in components):
        raise SpecError(f"slice {components} outside 0..{d - 1}")

    data_term = np.zeros(d)
    for k, (state, label, key) in enumerate(zip(batch.states, batch.labels, batch.keys)):
        y_hat = predict(spec, state, theta, profile, shots, seed_stream(seed, key, FORWARD), observable)
        residual = y_hat - label
        for j in components:
            plus, minus = theta.copy(), theta.copy()
            plus[j] += SHIFT
            minus[j] -= SHIFT
            y_plus = predict(spec, state, plus, profile, shots, seed_stream(seed, key, 2 * j + 1), observable)
            y_minus = predict(spec, state, minus, profile, shots, seed_stream(seed, key, 2 * j + 2), observable)
            data_term[j] += residual * (y_plus - y_minus) / 2

    values = np.zeros(d)
    idx = list(components)
    values[idx] = data_term[idx] / len(batch) + lam * theta[idx]
    return GradientVector(values, len(batch) * (1 + 2 * len(components)), components)


def batch_loss(
    spec: CircuitSpec,
    batch: Batch,
    params: Sequence[float],
    lam: float = 0.0,
    observable: Optional[Observable] = None,
) -> float:
    predictions = [predict(spec, state, params, observable=observable) for state in batch.states]
    return mse_loss(predictions, batch.labels, params, lam)


def finite_difference_gradient(
    spec: CircuitSpec,
    batch: Batch,
    params: Sequence[float],
    eps: float = 1e-6,
    lam: float = 0.0,
    shots: Optional[int] = None,
    observable: Optional[Observable] = None,
) -> GradientVector:
    """Central differences of the loss; a test oracle for noiseless analytic mode."""
    if shots is not None or spec.noise_mode != NoiseMode.none:
        raise OracleModeError("finite differences run only in noiseless analytic mode")
    if eps <= 0:
        raise SpecError(f"eps must be positive, got {eps}")
    if len(batch) == 0:
        raise BatchError("empty batch")

    theta = np.asarray(params, dtype=np.float64)
    values = np.zeros(theta.size)
    for j in range(theta.size):
        plus, minus = theta.copy(), theta.copy()
        plus[j] += eps
        minus[j] -= eps
        values[j] = (batch_loss(spec, batch, plus, lam, observable)
                     - batch_loss(spec, batch, minus, lam, observable)) / (2 * eps)
    return GradientVector(values, 2 * theta.size * len(batch), tuple(range(theta.size)))


def estimate_bias_decomposition(
    spec: CircuitSpec,
    batch: Batch,
    params: Sequence[float],
    profile: Optional[NoiseProfile],
    repetitions: int = 200,
    shots: Optional[int] = 8192,
    lam: float = 0.0,
    seed: int = 0,
    observable: Optional[Observable] = None,
) -> BiasDecomposition:
    """Split the noisy gradient into the scaled clean gradient, a bias and shot noise."""
    if repetitions < 30:
        logger.warning("bias_decomposition repetitions=%d below 30, statistics unreliable", repetitions)
    theta = np.asarray(params, dtype=np.float64)
    clean_spec = spec.with_noise(NoiseMode.none)

    clean = parameter_shift_gradient(clean_spec, batch, theta, lam=lam, observable=observable).values
    noisy_analytic = parameter_shift_gradient(spec, batch, theta, profile=profile, lam=lam,
                                              observable=observable).values
    if shots is None:
        samples = np.tile(noisy_analytic, (repetitions, 1))
    else:
        samples = np.stack([
            parameter_shift_gradient(spec, batch, theta, profile=profile, shots=shots,
                                     seed=(seed, r), lam=lam, observable=observable).values
            for r in range(repetitions)
        ])

    noisy_mean = samples.mean(axis=0)
    variance = samples.var(axis=0, ddof=1) if repetitions > 1 else np.zeros_like(noisy_mean)
    regularizer = lam * theta
    p_tilde = effective_depolarizing_prob(spec, profile)
    scale = (1.0 - p_tilde) ** 2
    implied = (noisy_mean - regularizer) - scale * (clean - regularizer)
    return BiasDecomposition(
        clean=clean,
        noisy_mean=noisy_mean,
        noisy_analytic=noisy_analytic,
        implied_bias=implied,
        shot_variance=variance,
        standard_error=np.sqrt(variance / repetitions),
        p_tilde=p_tilde,
        repetitions=repetitions,
        regularizer=regularizer,
    )
