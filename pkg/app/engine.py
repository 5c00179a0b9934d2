"""Exact density-matrix simulation of small parameterized circuits.

Basis ordering: qubit 0 is the most significant bit of the computational-basis
index, so a two-qubit index k = 2*b0 + b1.
"""
import logging
import string
from dataclasses import dataclass, replace
from enum import Enum
from functools import reduce
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import EncodingError, GateError, NoiseError, SpecError, UnsupportedObservable
from .models import NoiseMode, NoiseProfile

logger = logging.getLogger(__name__)

MAX_QUBITS = 8
HERMITIAN_ATOL = 1e-10
TRACE_ATOL = 1e-10
EIGEN_FLOOR = -1e-9

Seed = Union[None, int, Sequence[int], np.random.SeedSequence]

_IDENTITY = np.eye(2, dtype=np.complex128)


# ============ Types ============

@dataclass(frozen=True)
class DensityMatrix:
    n_qubits: int
    entries: np.ndarray

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise SpecError(f"n_qubits must be in 1..{MAX_QUBITS}, got {self.n_qubits}")
        if self.entries.shape != (self.dim, self.dim):
            raise SpecError(f"entries must be {self.dim}x{self.dim}, got {self.entries.shape}")

    @property
    def dim(self) -> int:
        return 2 ** self.n_qubits

    @classmethod
    def zero_state(cls, n_qubits: int) -> "DensityMatrix":
        entries = np.zeros((2 ** n_qubits, 2 ** n_qubits), dtype=np.complex128)
        entries[0, 0] = 1.0
        return cls(n_qubits, entries)

    @classmethod
    def maximally_mixed(cls, n_qubits: int) -> "DensityMatrix":
        dim = 2 ** n_qubits
        return cls(n_qubits, np.eye(dim, dtype=np.complex128) / dim)

    def trace(self) -> float:
        return float(np.real(np.trace(self.entries)))

    def probabilities(self) -> np.ndarray:
        """Computational-basis outcome distribution (diagonal of rho)."""
        probs = np.clip(np.real(np.diag(self.entries)), 0.0, None)
        return probs / probs.sum()

    def is_valid(self) -> bool:
        rho = self.entries
        if not np.allclose(rho, rho.conj().T, atol=HERMITIAN_ATOL):
            return False
        if abs(self.trace() - 1.0) > TRACE_ATOL:
            return False
        return bool(np.linalg.eigvalsh(rho).min() >= EIGEN_FLOOR)


class GateKind(str, Enum):
    ry = "ry"
    rz = "rz"
    cz = "cz"
    unitary = "unitary"


ROTATIONS = (GateKind.ry, GateKind.rz)


@dataclass(frozen=True)
class GateOp:
    kind: GateKind
    targets: Tuple[int, ...]
    angle: float = 0.0
    param_index: Optional[int] = None
    matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(set(self.targets)) != len(self.targets):
            raise GateError(f"gate targets must be distinct: {self.targets}")
        if any(t < 0 for t in self.targets):
            raise GateError(f"negative target in {self.targets}")
        if self.kind in ROTATIONS and len(self.targets) != 1:
            raise GateError(f"{self.kind.value} acts on exactly one qubit")
        if self.kind == GateKind.cz and len(self.targets) != 2:
            raise GateError("cz acts on exactly two qubits")
        if self.kind == GateKind.unitary:
            if len(self.targets) != 1 or self.matrix is None or self.matrix.shape != (2, 2):
                raise GateError("generic unitary needs one target and a 2x2 matrix")
        if self.param_index is not None and self.kind not in ROTATIONS:
            raise GateError("only rotation gates can be parameterized")

    @property
    def is_two_qubit(self) -> bool:
        return len(self.targets) == 2


@dataclass(frozen=True)
class CircuitSpec:
    n_qubits: int
    gates: Tuple[GateOp, ...]
    noise_mode: NoiseMode = NoiseMode.none
    merged_depth: int = 1

    def __post_init__(self):
        if self.merged_depth < 1:
            raise SpecError("merged_depth must be positive")
        for gate in self.gates:
            if max(gate.targets) >= self.n_qubits:
                raise GateError(f"gate {gate.kind.value} targets {gate.targets} outside {self.n_qubits} qubits")
        indices = sorted(g.param_index for g in self.gates if g.param_index is not None)
        if indices != list(range(len(indices))):
            raise SpecError(f"param indices must be 0..d-1 each used once, got {indices}")

    @property
    def n_params(self) -> int:
        return sum(1 for g in self.gates if g.param_index is not None)

    def with_noise(self, noise_mode: NoiseMode, merged_depth: Optional[int] = None) -> "CircuitSpec":
        return replace(self, noise_mode=noise_mode, merged_depth=merged_depth or self.merged_depth)


class ObservableKind(str, Enum):
    z_parity = "z_parity"
    custom = "custom"


@dataclass(frozen=True)
class Observable:
    kind: ObservableKind
    n_qubits: int
    matrix: Optional[np.ndarray] = None

    @classmethod
    def z_parity(cls, n_qubits: int) -> "Observable":
        return cls(ObservableKind.z_parity, n_qubits)

    @property
    def is_diagonal(self) -> bool:
        if self.kind == ObservableKind.z_parity:
            return True
        off = self.matrix - np.diag(np.diag(self.matrix))
        return bool(np.allclose(off, 0.0))

    def eigenvalues(self) -> np.ndarray:
        """Diagonal of the observable in the computational basis."""
        if self.kind == ObservableKind.z_parity:
            parity = np.array([bin(k).count("1") % 2 for k in range(2 ** self.n_qubits)])
            return 1.0 - 2.0 * parity
        return np.real(np.diag(self.matrix))

    def as_matrix(self) -> np.ndarray:
        if self.kind == ObservableKind.z_parity:
            return np.diag(self.eigenvalues()).astype(np.complex128)
        return self.matrix


# ============ Gate matrices ============

def ry_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=np.complex128)


def rz_matrix(theta: float) -> np.ndarray:
    phase = np.exp(-0.5j * theta)
    return np.array([[phase, 0], [0, phase.conjugate()]], dtype=np.complex128)


def _embed(single: np.ndarray, target: int, n_qubits: int) -> np.ndarray:
    factors = [single if q == target else _IDENTITY for q in range(n_qubits)]
    return reduce(np.kron, factors)


def _cz_diagonal(targets: Tuple[int, int], n_qubits: int) -> np.ndarray:
    shifts = [n_qubits - 1 - t for t in targets]
    index = np.arange(2 ** n_qubits)
    both = ((index >> shifts[0]) & 1) & ((index >> shifts[1]) & 1)
    return 1.0 - 2.0 * both


# ============ Operations ============

def amplitude_encode(x: Sequence[float]) -> DensityMatrix:
    """Pure state whose amplitudes are x / ||x||."""
    vector = np.asarray(x, dtype=np.float64).ravel()
    size = vector.size
    if size < 2 or size & (size - 1):
        raise EncodingError(f"length {size} is not a power of two")
    if not np.all(np.isfinite(vector)):
        raise EncodingError("features must be finite")
    norm = np.linalg.norm(vector)
    if norm == 0.0:
        raise EncodingError("cannot encode the zero vector")
    psi = (vector / norm).astype(np.complex128)
    return DensityMatrix(size.bit_length() - 1, np.outer(psi, psi.conj()))


def apply_gate(state: DensityMatrix, gate: GateOp, bound_angle: Optional[float] = None) -> DensityMatrix:
    n = state.n_qubits
    if max(gate.targets) >= n:
        raise GateError(f"targets {gate.targets} out of range for {n} qubits")

    rho = state.entries
    if gate.kind == GateKind.cz:
        diag = _cz_diagonal(gate.targets, n)
        return DensityMatrix(n, rho * np.outer(diag, diag))

    angle = gate.angle if bound_angle is None else bound_angle
    if gate.kind == GateKind.ry:
        single = ry_matrix(angle)
    elif gate.kind == GateKind.rz:
        single = rz_matrix(angle)
    else:
        single = gate.matrix
    unitary = _embed(single, gate.targets[0], n)
    return DensityMatrix(n, unitary @ rho @ unitary.conj().T)


def _replace_with_identity(rho: np.ndarray, qubits: Sequence[int], n_qubits: int) -> np.ndarray:
    """Tr_qubits(rho) with I/2^k put back on the traced qubits."""
    rows = list(string.ascii_lowercase[:n_qubits])
    cols = list(string.ascii_uppercase[:n_qubits])
    traced_cols = [rows[q] if q in qubits else cols[q] for q in range(n_qubits)]
    kept = [q for q in range(n_qubits) if q not in qubits]
    kept_sub = "".join(rows[q] for q in kept) + "".join(cols[q] for q in kept)

    tensor = rho.reshape((2,) * (2 * n_qubits))
    reduced = np.einsum("".join(rows) + "".join(traced_cols) + "->" + kept_sub, tensor)

    subscripts = [kept_sub] + [rows[q] + cols[q] for q in qubits]
    operands = [reduced] + [np.eye(2)] * len(qubits)
    full = np.einsum(",".join(subscripts) + "->" + "".join(rows) + "".join(cols), *operands)
    return full.reshape(rho.shape) / 2 ** len(qubits)


def apply_depolarizing(state: DensityMatrix, qubits: Sequence[int], p: float) -> DensityMatrix:
    if not 0.0 <= p <= 1.0:
        raise NoiseError(f"depolarizing probability {p} outside [0, 1]")
    n = state.n_qubits
    support = sorted(set(qubits))
    if not support or support[0] < 0 or support[-1] >= n:
        raise NoiseError(f"invalid qubit set {qubits} for {n} qubits")
    if p == 0.0:
        return state

    rho = state.entries
    if len(support) == n:
        mixed = np.trace(rho) * np.eye(state.dim, dtype=np.complex128) / state.dim
    else:
        mixed = _replace_with_identity(rho, support, n)
    return DensityMatrix(n, (1.0 - p) * rho + p * mixed)


def merged_depolarizing_prob(p: float, layers: int) -> float:
    """Single channel equivalent to `layers` stacked depolarizing channels of strength p."""
    if not 0.0 <= p <= 1.0:
        raise NoiseError(f"depolarizing probability {p} outside [0, 1]")
    if layers < 1:
        raise NoiseError(f"layer count must be positive, got {layers}")
    return 1.0 - (1.0 - p) ** layers


def run_circuit(
    spec: CircuitSpec,
    state: DensityMatrix,
    params: Sequence[float],
    profile: Optional[NoiseProfile] = None,
) -> DensityMatrix:
    if len(params) != spec.n_params:
        raise SpecError(f"expected {spec.n_params} parameters, got {len(params)}")
    if state.n_qubits != spec.n_qubits:
        raise SpecError(f"input has {state.n_qubits} qubits, circuit has {spec.n_qubits}")

    per_gate = spec.noise_mode == NoiseMode.per_gate and profile is not None
    for gate in spec.gates:
        angle = params[gate.param_index] if gate.param_index is not None else None
        state = apply_gate(state, gate, angle)
        if per_gate:
            p = profile.p2 if gate.is_two_qubit else profile.p1
            state = apply_depolarizing(state, gate.targets, p)

    if spec.noise_mode == NoiseMode.merged and profile is not None:
        p_merged = merged_depolarizing_prob(profile.p1, spec.merged_depth)
        state = apply_depolarizing(state, range(spec.n_qubits), p_merged)
    return state


def expectation(
    state: DensityMatrix,
    observable: Observable,
    shots: Optional[int] = None,
    seed: Seed = None,
) -> float:
    """Tr(O rho) exactly, or the mean of `shots` sampled eigenvalues."""
    if shots is None:
        if observable.is_diagonal:
            return float(np.real(np.diag(state.entries)) @ observable.eigenvalues())
        return float(np.real(np.trace(observable.as_matrix() @ state.entries)))

    if shots < 1:
        raise SpecError(f"shots must be positive, got {shots}")
    if not observable.is_diagonal:
        raise UnsupportedObservable("sampled mode needs an observable diagonal in the computational basis")
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(shots, state.probabilities())
    return float(counts @ observable.eigenvalues()) / shots
