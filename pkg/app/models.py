import hashlib
import json
import math
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

SCHEMA_VERSION = "1.0"


class NoiseMode(str, Enum):
    none = "none"
    per_gate = "per_gate"
    merged = "merged"


class NoiseGeneration(str, Enum):
    gaussian = "gaussian"
    differ = "differ"
    explicit = "explicit"


class OptimizerKind(str, Enum):
    adam = "adam"
    sgd = "sgd"


class ConvergenceSplit(str, Enum):
    train = "train"
    test = "test"


class MessageType(str, Enum):
    params = "params"
    grad = "grad"
    converged = "converged"


# ============ Noise Models ============

class NoiseProfile(BaseModel):
    node_id: int
    p1: float = Field(ge=0.0, le=1.0)
    p2: float = Field(ge=0.0, le=1.0)

    @classmethod
    def from_p1(cls, node_id: int, p1: float) -> "NoiseProfile":
        """Two-qubit gates get four times the single-qubit probability, capped at 1."""
        return cls(node_id=node_id, p1=p1, p2=min(1.0, 4.0 * p1))


class NoiseInstance(BaseModel):
    profiles: List[NoiseProfile]
    mu: float
    generation: NoiseGeneration
    target_differ: Optional[float] = None
    construction: Optional[str] = None

    @property
    def p1_values(self) -> List[float]:
        return [p.p1 for p in self.profiles]


class NoiseSpec(BaseModel):
    generation: NoiseGeneration = NoiseGeneration.gaussian
    mu: float = Field(default=0.0, ge=0.0, le=0.25)
    target_differ: Optional[float] = Field(default=None, ge=0.0)
    mean: float = Field(default=0.04, gt=0.0, le=0.25)
    p1: Optional[List[float]] = None
    seed: Optional[int] = None  # None: derived from the run seed

    @model_validator(mode="after")
    def check_generation(self):
        if self.generation == NoiseGeneration.explicit and not self.p1:
            raise ValueError("explicit noise requires a p1 list")
        if self.generation == NoiseGeneration.differ and self.target_differ is None:
            raise ValueError("differ noise requires target_differ")
        if self.p1 and any(not 0.0 <= p <= 1.0 for p in self.p1):
            raise ValueError("p1 values must lie in [0, 1]")
        return self


# ============ Wire Models ============

class GradientMessage(BaseModel):
    node_id: int
    iteration: int = Field(ge=0)
    group: int = Field(ge=0)
    indices: List[int]
    values: List[float]
    circuit_executions: int = Field(ge=0)
    attempt: int = Field(default=0, ge=0)
    sparse: bool = False
    residual: Optional[List[float]] = None  # group residual handed back in compressed runs

    @model_validator(mode="after")
    def check_values(self):
        if len(self.indices) != len(self.values):
            raise ValueError("indices and values differ in length")
        if any(not math.isfinite(v) for v in self.values):
            raise ValueError("gradient values must be finite")
        return self


class ParamsPayload(BaseModel):
    iteration: int
    attempt: int = 0
    theta: List[float]
    batch: List[int]
    assignment: List[int]  # group index -> node id
    groups: List[List[int]]
    threshold: Optional[float] = None
    residuals: Optional[Dict[int, List[float]]] = None


class Envelope(BaseModel):
    type: MessageType
    iteration: int
    payload: Dict[str, Any] = {}


# ============ Ledger / History ============

class CommLedger(BaseModel):
    transmitted: int = 0
    circuits: int = 0
    wall_circuits: int = 0
    residual_handoffs: int = 0
    iterations: int = 0
    transmitted_per_iteration: List[int] = []
    circuits_per_iteration: List[int] = []

    def record(self, transmitted: int, circuits: int, wall_circuits: int, handoffs: int = 0) -> None:
        self.transmitted += transmitted
        self.circuits += circuits
        self.wall_circuits += wall_circuits
        self.residual_handoffs += handoffs
        self.iterations += 1
        self.transmitted_per_iteration.append(transmitted)
        self.circuits_per_iteration.append(circuits)

    def uncompressed_volume(self, d: int) -> int:
        """CV of the same run had every component been sent."""
        return self.iterations * d


class HistoryRow(BaseModel):
    iteration: int
    loss: float
    train_acc: float
    test_acc: float
    grad_norm: Optional[float] = None
    exact_grad_sq: Optional[float] = None  # squared exact gradient norm at the pre-update iterate
    transmitted_components: int
    circuits: int


class RunResult(BaseModel):
    run: int
    seed: int
    converged: bool = False
    iterations: int = 0
    test_node: int = 0
    final_theta: List[float] = []
    final_gradient: Optional[List[float]] = None
    train_accuracy: float = 0.0
    test_accuracy: float = 0.0
    threshold: Optional[float] = None
    ledger: CommLedger = Field(default_factory=CommLedger)
    history: List[HistoryRow] = []
    noise: Optional[NoiseInstance] = None
    error: Optional[str] = None
    elapsed_seconds: Optional[float] = None


# ============ Experiment Config ============

class ExperimentConfig(BaseModel):
    name: str = "experiment"
    nodes: int = Field(default=1, ge=1)
    layers: int = Field(default=4, ge=1)
    merged_depth: Optional[int] = Field(default=None, ge=1)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    noise_mode: NoiseMode = NoiseMode.per_gate
    shots: Optional[int] = Field(default=8192, ge=1)  # None: analytic expectation
    batch_size: int = Field(default=5, ge=1)
    lam: float = Field(default=0.0, ge=0.0)

    optimizer: OptimizerKind = OptimizerKind.adam
    learning_rate: Optional[float] = Field(default=None, gt=0.0)

    threshold: Optional[float] = Field(default=None, ge=0.0)  # None: no compression
    auto_threshold_percentile: Optional[float] = Field(default=None, gt=0.0, lt=100.0)
    alternate: bool = False

    convergence_threshold: float = Field(default=0.96, gt=0.0, le=1.0)
    strict_convergence: bool = False
    convergence_split: ConvergenceSplit = ConvergenceSplit.train
    test_node: Optional[int] = None  # None: least noisy node
    max_iterations: int = Field(default=10_000, ge=1)
    run_to_cap: bool = False

    repetitions: int = Field(default=20, ge=1)
    seed: int = 0
    resample_split: bool = True
    normalize_features: bool = False
    iris_path: Optional[str] = None
    final_gradient: bool = True  # exact gradient at the final iterate, for R1
    track_exact_gradient: bool = False  # exact gradient at every iterate, for the iteration-averaged R1

    workers: int = Field(default=1, ge=1)
    threads: int = Field(default=1, ge=1)
    barrier_timeout: float = Field(default=60.0, gt=0.0)
    timed: bool = False

    @field_validator("test_node")
    @classmethod
    def check_test_node(cls, value):
        if value is not None and value < 0:
            raise ValueError("test_node must be non-negative")
        return value

    @model_validator(mode="after")
    def check_consistency(self):
        if self.noise.generation == NoiseGeneration.explicit and len(self.noise.p1) != self.nodes:
            raise ValueError("explicit p1 list must have one entry per node")
        if self.test_node is not None and self.test_node >= self.nodes:
            raise ValueError("test_node out of range")
        if self.auto_threshold_percentile is not None and self.threshold is not None:
            raise ValueError("set either threshold or auto_threshold_percentile, not both")
        return self

    @property
    def compressed(self) -> bool:
        return self.threshold is not None or self.auto_threshold_percentile is not None

    @property
    def depth(self) -> int:
        return self.merged_depth or self.layers

    def config_hash(self) -> str:
        # execution knobs never change the numbers, so they stay out of the hash
        fields = self.model_dump(mode="json", exclude={"workers", "threads", "barrier_timeout", "timed"})
        canonical = json.dumps(fields, sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class RunArtifact(BaseModel):
    schema_version: str = SCHEMA_VERSION
    config_hash: str
    config: ExperimentConfig
    runs: List[RunResult] = []
    summary: Dict[str, Any] = {}
