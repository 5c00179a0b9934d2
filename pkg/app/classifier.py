"""Binary classifier: amplitude encoding, hardware-efficient ansatz, parity readout."""
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .engine import (
    CircuitSpec, DensityMatrix, GateKind, GateOp, Observable, Seed,
    amplitude_encode, expectation, run_circuit,
)
from .errors import ShapeError, SpecError
from .models import NoiseMode, NoiseProfile

TWO_PI = 2.0 * np.pi
DECISION_THRESHOLD = 0.5


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.0
    n_data: int = 5
    shots: Optional[int] = 8192

    def __post_init__(self):
        if self.lam < 0:
            raise SpecError("lambda must be non-negative")
        if self.n_data < 1:
            raise SpecError("N_D must be positive")
        if self.shots is not None and self.shots < 1:
            raise SpecError("shots must be positive")


def build_ansatz(
    n_qubits: int = 2,
    layers: int = 4,
    noise_mode: NoiseMode = NoiseMode.none,
    merged_depth: Optional[int] = None,
) -> CircuitSpec:
    """Layers of Ry on every qubit, a CZ chain between layers, none after the last."""
    gates = []
    for layer in range(layers):
        for qubit in range(n_qubits):
            gates.append(GateOp(GateKind.ry, (qubit,), param_index=layer * n_qubits + qubit))
        if layer < layers - 1:
            gates.extend(GateOp(GateKind.cz, (q, q + 1)) for q in range(n_qubits - 1))
    return CircuitSpec(n_qubits, tuple(gates), noise_mode, merged_depth or layers)


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    return np.mod(theta, TWO_PI)


def random_parameters(d: int, seed: Seed = None) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, TWO_PI, size=d)


def predict(
    spec: CircuitSpec,
    x: Union[Sequence[float], DensityMatrix],
    params: Sequence[float],
    profile: Optional[NoiseProfile] = None,
    shots: Optional[int] = None,
    seed: Seed = None,
    observable: Optional[Observable] = None,
) -> float:
    """y_hat = (1 + <O>) / 2, in [0, 1] for a parity observable."""
    state = x if isinstance(x, DensityMatrix) else amplitude_encode(x)
    observable = observable or Observable.z_parity(spec.n_qubits)
    out = run_circuit(spec, state, params, profile)
    return 0.5 * (1.0 + expectation(out, observable, shots, seed))


def mse_loss(predictions: Sequence[float], labels: Sequence[float], params: Sequence[float], lam: float = 0.0) -> float:
    y_hat = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ShapeError(f"{y_hat.size} predictions for {y.size} labels")
    if y.size == 0:
        raise ShapeError("loss needs at least one example")
    theta = np.asarray(params, dtype=np.float64)
    return float(np.sum((y_hat - y) ** 2) / (2 * y.size) + 0.5 * lam * theta @ theta)


def accuracy(predictions: Sequence[float], labels: Sequence[float]) -> float:
    y_hat = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels)
    if y_hat.shape != y.shape:
        raise ShapeError(f"{y_hat.size} predictions for {y.size} labels")
    return float(np.mean((y_hat >= DECISION_THRESHOLD).astype(int) == y))
