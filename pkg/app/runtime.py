"""Parameter-parallel training: partitioning, workers, aggregation, the parameter server."""
import logging
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .classifier import accuracy, build_ansatz, mse_loss, predict, random_parameters, wrap_angles
from .compression import ResidualStore, auto_threshold, compress_gradient
from .engine import CircuitSpec, DensityMatrix, amplitude_encode
from .errors import (
    BarrierTimeout, BatchError, DataError, NumericsError, PartitionError, ProtocolError,
    ShapeError, SpecError,
)
from .gradients import Batch, GradientVector, SeedPrefix, parameter_shift_gradient, seed_stream
from .models import (
    CommLedger, ConvergenceSplit, ExperimentConfig, GradientMessage, HistoryRow,
    NoiseGeneration, NoiseInstance, NoiseMode, NoiseProfile, OptimizerKind, ParamsPayload,
    RunResult,
)
from .noise_lab import profiles_from_p1, generate_profiles_for_differ, sample_gaussian_profiles
from .transport import InProcessTransport

logger = logging.getLogger(__name__)

N_QUBITS = 2


# ============ Partitioning and schedule ============

@dataclass(frozen=True)
class Partition:
    groups: Tuple[Tuple[int, ...], ...]

    def __len__(self) -> int:
        return len(self.groups)

    @property
    def d(self) -> int:
        return sum(len(g) for g in self.groups)


def partition_parameters(d: int, nodes: int) -> Partition:
    """Contiguous near-equal slices; group i gets [i*d/M, (i+1)*d/M) when M divides d."""
    if nodes < 1:
        raise PartitionError(f"need at least one node, got {nodes}")
    if nodes > d:
        raise PartitionError(f"{nodes} nodes for {d} parameters")
    slices = np.array_split(np.arange(d), nodes)
    return Partition(tuple(tuple(int(i) for i in s) for s in slices))


def assign_alternate(iteration: int, nodes: int) -> Tuple[int, ...]:
    """Group g goes to node (g + t) mod M."""
    if iteration < 0:
        raise SpecError(f"iteration must be non-negative, got {iteration}")
    return tuple((g + iteration) % nodes for g in range(nodes))


def assignment_for(iteration: int, nodes: int, alternate: bool) -> Tuple[int, ...]:
    return assign_alternate(iteration, nodes) if alternate else tuple(range(nodes))


# ============ Workers ============

def worker_step(
    spec: CircuitSpec,
    node_id: int,
    params: Sequence[float],
    group: int,
    indices: Sequence[int],
    batch: Batch,
    assignment: Sequence[int],
    profile: Optional[NoiseProfile] = None,
    shots: Optional[int] = None,
    seed: SeedPrefix = None,
    lam: float = 0.0,
    iteration: int = 0,
    attempt: int = 0,
) -> GradientMessage:
    if not 0 <= group < len(assignment) or assignment[group] != node_id:
        raise ProtocolError(f"node {node_id} is not scheduled for group {group} at iteration {iteration}")
    gradient = parameter_shift_gradient(spec, batch, params, indices, profile, shots, seed, lam)
    return GradientMessage(
        node_id=node_id,
        iteration=iteration,
        attempt=attempt,
        group=group,
        indices=list(indices),
        values=gradient.on(indices).tolist(),
        circuit_executions=gradient.circuit_executions,
    )


class Worker:
    """One simulated QPU: computes the gradient slice of whichever group it is assigned."""

    def __init__(
        self,
        node_id: int,
        spec: CircuitSpec,
        states: Sequence[DensityMatrix],
        labels: np.ndarray,
        profile: Optional[NoiseProfile] = None,
        shots: Optional[int] = None,
        shot_seed: Optional[int] = None,
        lam: float = 0.0,
    ):
        self.node_id = node_id
        self.spec = spec
        self.states = tuple(states)
        self.labels = np.asarray(labels, dtype=np.float64)
        self.profile = profile
        self.shots = shots
        self.shot_seed = shot_seed
        self.lam = lam
        self.raw_totals: Dict[int, np.ndarray] = {}
        self._counted: set = set()

    def _batch(self, keys: Sequence[int]) -> Batch:
        if not keys:
            raise BatchError("empty batch")
        return Batch(tuple(self.states[k] for k in keys), self.labels[list(keys)], tuple(keys))

    def step(self, payload: ParamsPayload) -> GradientMessage:
        if self.node_id not in payload.assignment:
            raise ProtocolError(f"node {self.node_id} has no group at iteration {payload.iteration}")
        group = payload.assignment.index(self.node_id)
        indices = payload.groups[group]
        seed = None if self.shot_seed is None else (self.shot_seed, payload.iteration)
        message = worker_step(
            self.spec, self.node_id, payload.theta, group, indices, self._batch(payload.batch),
            payload.assignment, self.profile, self.shots, seed, self.lam,
            payload.iteration, payload.attempt,
        )
        logger.debug("worker_step node=%d iteration=%d group=%d circuits=%d",
                     self.node_id, payload.iteration, group, message.circuit_executions)
        if payload.threshold is None:
            return message

        raw = np.asarray(message.values)
        # a retried attempt recomputes the same raw gradient
        if (payload.iteration, group) not in self._counted:
            self._counted.add((payload.iteration, group))
            self.raw_totals[group] = self.raw_totals.get(group, np.zeros(len(indices))) + raw
        residual = (payload.residuals or {}).get(group)
        clipped = compress_gradient(raw, residual, payload.threshold)
        sent = clipped.sent_positions
        return message.model_copy(update={
            "indices": [indices[k] for k in sent],
            "values": clipped.transmit[sent].tolist(),
            "sparse": True,
            "residual": clipped.keep.tolist(),
        })


# ============ Aggregation ============

def aggregate(
    messages: Sequence[GradientMessage],
    assignment: Sequence[int],
    groups: Sequence[Sequence[int]],
    d: int,
) -> GradientVector:
    """Place each node's components into a dense vector; unsent components stay zero."""
    by_node: Dict[int, GradientMessage] = {}
    for message in messages:
        if message.node_id in by_node:
            raise ProtocolError(f"duplicate message from node {message.node_id}")
        by_node[message.node_id] = message

    expected = set(assignment)
    missing = expected - set(by_node)
    if missing:
        raise BarrierTimeout(f"no gradient from nodes {sorted(missing)}")
    unexpected = set(by_node) - expected
    if unexpected:
        raise ProtocolError(f"messages from unscheduled nodes {sorted(unexpected)}")

    values = np.zeros(d)
    seen = set()
    circuits = 0
    for node_id, message in sorted(by_node.items()):
        group = list(assignment).index(node_id)
        if message.group != group:
            raise ProtocolError(f"node {node_id} answered for group {message.group}, scheduled {group}")
        allowed = set(groups[group])
        if not set(message.indices) <= allowed:
            raise ProtocolError(f"node {node_id} sent indices outside group {group}")
        if not message.sparse and sorted(message.indices) != sorted(allowed):
            raise ProtocolError(f"dense message from node {node_id} does not cover group {group}")
        overlap = seen & set(message.indices)
        if overlap or len(set(message.indices)) != len(message.indices):
            raise ProtocolError(f"overlapping indices {sorted(overlap)}")
        seen |= set(message.indices)
        values[message.indices] = message.values
        circuits += message.circuit_executions
    return GradientVector(values, circuits, tuple(range(d)))


# ============ Optimizers ============

@dataclass(frozen=True)
class AdamConfig:
    alpha: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class ServerState:
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    iteration: int = 0
    ledger: CommLedger = field(default_factory=CommLedger)
    history: List[HistoryRow] = field(default_factory=list)

    @classmethod
    def initial(cls, theta: Sequence[float]) -> "ServerState":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta=theta, m=np.zeros_like(theta), v=np.zeros_like(theta))


def _checked(state: ServerState, gradient: Sequence[float]) -> np.ndarray:
    g = np.asarray(gradient, dtype=np.float64)
    if g.shape != state.theta.shape:
        raise ShapeError(f"gradient of length {g.size} for {state.theta.size} parameters")
    if not np.all(np.isfinite(g)):
        raise NumericsError("non-finite gradient")
    return g


def adam_update(state: ServerState, gradient: Sequence[float], config: AdamConfig = AdamConfig()) -> ServerState:
    """One bias-corrected Adam step; angles wrapped into [0, 2pi)."""
    g = _checked(state, gradient)
    step = state.step + 1
    m = config.beta1 * state.m + (1 - config.beta1) * g
    v = config.beta2 * state.v + (1 - config.beta2) * g * g
    m_hat = m / (1 - config.beta1 ** step)
    v_hat = v / (1 - config.beta2 ** step)
    theta = wrap_angles(state.theta - config.alpha * m_hat / (np.sqrt(v_hat) + config.eps))
    return replace(state, theta=theta, m=m, v=v, step=step)


def smoothness_learning_rate(d: int, lam: float) -> float:
    """eta = 1/S with S = (3/2 + lambda) d^2."""
    return 1.0 / ((1.5 + lam) * d * d)


def sgd_update(state: ServerState, gradient: Sequence[float], lr: Optional[float] = None, lam: float = 0.0) -> ServerState:
    g = _checked(state, gradient)
    lr = smoothness_learning_rate(g.size, lam) if lr is None else lr
    return replace(state, theta=wrap_angles(state.theta - lr * g), step=state.step + 1)


# ============ Convergence test ============

@dataclass(frozen=True)
class ConvergenceCheck:
    converged: bool
    accuracy: float
    predictions: np.ndarray


def convergence_test(
    spec: CircuitSpec,
    params: Sequence[float],
    states: Sequence[DensityMatrix],
    labels: Sequence[float],
    threshold: float = 0.96,
    profile: Optional[NoiseProfile] = None,
    shots: Optional[int] = None,
    seed: SeedPrefix = None,
    keys: Sequence[int] = (),
    strict: bool = False,
) -> ConvergenceCheck:
    """Classify `states` on one node; converged when accuracy reaches `threshold`."""
    if not 0 < threshold <= 1:
        raise SpecError(f"convergence threshold must lie in (0, 1], got {threshold}")
    if len(states) == 0:
        raise DataError("convergence test on an empty set")
    keys = tuple(keys) or tuple(range(len(states)))
    predictions = np.array([
        predict(spec, state, params, profile, shots, seed_stream(seed, key))
        for state, key in zip(states, keys)
    ])
    acc = accuracy(predictions, labels)
    converged = acc > threshold if strict else acc >= threshold
    return ConvergenceCheck(converged, acc, predictions)


def select_test_node(instance: Optional[NoiseInstance], configured: Optional[int] = None) -> int:
    """The configured node, else the least noisy one (lowest index on ties)."""
    if configured is not None:
        return configured
    if instance is None or not instance.profiles:
        return 0
    return int(np.argmin(instance.p1_values))


# ============ Run context ============

class BatchSampler:
    """Seeded shuffles of the training indices, consumed batch by batch across epochs."""

    def __init__(self, indices: Sequence[int], batch_size: int, seed: Optional[int] = None):
        if len(indices) == 0:
            raise DataError("cannot sample batches from an empty training set")
        self.indices = np.asarray(indices, dtype=int)
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        self._queue: List[int] = []

    def next(self) -> List[int]:
        while len(self._queue) < self.batch_size:
            self._queue.extend(int(i) for i in self.rng.permutation(self.indices))
        batch, self._queue = self._queue[:self.batch_size], self._queue[self.batch_size:]
        return batch


def _seed_int(sequence: np.random.SeedSequence) -> int:
    return int(sequence.generate_state(1)[0])


def build_noise_instance(config: ExperimentConfig, seed: int) -> NoiseInstance:
    spec = config.noise
    seed = spec.seed if spec.seed is not None else seed
    if spec.generation == NoiseGeneration.explicit:
        return NoiseInstance(profiles=profiles_from_p1(spec.p1), mu=float(np.mean(spec.p1)),
                             generation=NoiseGeneration.explicit)
    if spec.generation == NoiseGeneration.differ:
        return generate_profiles_for_differ(config.nodes, spec.target_differ, spec.mean, seed)
    return sample_gaussian_profiles(config.nodes, spec.mu, seed)


@dataclass
class RunContext:
    """Everything a run needs that is derived from (config, dataset, repetition)."""
    config: ExperimentConfig
    repetition: int
    seed: int
    spec: CircuitSpec
    dataset: object
    states: Tuple[DensityMatrix, ...]
    instance: NoiseInstance
    test_node: int
    theta0: np.ndarray
    partition: Partition
    batch_seed: int
    shot_seed: int
    eval_seed: int

    @classmethod
    def build(cls, config: ExperimentConfig, dataset, repetition: int = 0) -> "RunContext":
        root = np.random.SeedSequence([config.seed, repetition])
        split_seq, init_seq, noise_seq, batch_seq, shot_seq, eval_seq = root.spawn(6)

        if config.normalize_features:
            dataset = dataset.normalized()
        split_seed = _seed_int(split_seq) if config.resample_split else config.seed
        dataset = dataset.split(split_seed % (2 ** 32))

        spec = build_ansatz(N_QUBITS, config.layers, config.noise_mode, config.depth)
        instance = build_noise_instance(config, _seed_int(noise_seq))
        return cls(
            config=config,
            repetition=repetition,
            seed=_seed_int(root),
            spec=spec,
            dataset=dataset,
            states=tuple(amplitude_encode(x) for x in dataset.features),
            instance=instance,
            test_node=select_test_node(instance, config.test_node),
            theta0=random_parameters(spec.n_params, _seed_int(init_seq)),
            partition=partition_parameters(spec.n_params, config.nodes),
            batch_seed=_seed_int(batch_seq),
            shot_seed=_seed_int(shot_seq),
            eval_seed=_seed_int(eval_seq),
        )

    def profile(self, node_id: int) -> Optional[NoiseProfile]:
        if self.config.noise_mode == NoiseMode.none:
            return None
        return self.instance.profiles[node_id]

    def worker(self, node_id: int) -> Worker:
        return Worker(node_id, self.spec, self.states, self.dataset.labels, self.profile(node_id),
                      self.config.shots, self.shot_seed, self.config.lam)

    def workers(self) -> List[Worker]:
        return [self.worker(i) for i in range(self.config.nodes)]


# ============ Parameter server ============

class ParameterServer:
    """Single owner of the server state; one update per completed barrier."""

    def __init__(self, context: RunContext, clock: Callable[[], float] = time.monotonic):
        self.context = context
        self.config = context.config
        self.clock = clock
        self.state = ServerState.initial(context.theta0)
        self.sampler = BatchSampler(context.dataset.train_idx, self.config.batch_size, context.batch_seed)
        self.residuals = ResidualStore(context.partition.groups) if self.config.compressed else None
        self.threshold = self.config.threshold  # None until calibrated when auto_threshold_percentile is set
        self.converged = False
        self.converged_at: Optional[int] = None
        self.finished = False
        self.attempt = 0
        self._batch: Optional[List[int]] = None
        self._batch_iteration = -1
        self._pending: Dict[int, GradientMessage] = {}
        self._deadline: Optional[float] = None
        self._previous_assignment: Optional[Tuple[int, ...]] = None
        self._lock = threading.Lock()

    @property
    def iteration(self) -> int:
        return self.state.iteration

    def assignment(self) -> Tuple[int, ...]:
        return assignment_for(self.state.iteration, self.config.nodes, self.config.alternate)

    def _current_batch(self) -> List[int]:
        if self._batch_iteration != self.state.iteration:
            self._batch = self.sampler.next()
            self._batch_iteration = self.state.iteration
        return self._batch

    def broadcast(self) -> ParamsPayload:
        with self._lock:
            if self._deadline is None:
                self._deadline = self.clock() + self.config.barrier_timeout
            residuals = None
            if self.residuals is not None and self.threshold is not None:
                residuals = self.residuals.snapshot()
            return ParamsPayload(
                iteration=self.state.iteration,
                attempt=self.attempt,
                theta=self.state.theta.tolist(),
                batch=self._current_batch(),
                assignment=list(self.assignment()),
                groups=[list(g) for g in self.context.partition.groups],
                threshold=self.threshold,
                residuals=residuals,
            )

    def pending_nodes(self) -> List[int]:
        return sorted(set(range(self.config.nodes)) - set(self._pending))

    def submit(self, message: GradientMessage) -> bool:
        """Queue one node's message; True once every node has reported."""
        with self._lock:
            if self.finished:
                raise ProtocolError("training already finished")
            if message.iteration != self.state.iteration or message.attempt != self.attempt:
                raise ProtocolError(
                    f"message for iteration {message.iteration}/{message.attempt}, "
                    f"server at {self.state.iteration}/{self.attempt}"
                )
            if message.node_id in self._pending:
                raise ProtocolError(f"node {message.node_id} already reported iteration {message.iteration}")
            if not 0 <= message.node_id < self.config.nodes:
                raise ProtocolError(f"unknown node {message.node_id}")
            self._pending[message.node_id] = message
            return self.barrier_complete()

    def barrier_complete(self) -> bool:
        return len(self._pending) == self.config.nodes

    def check_deadline(self) -> None:
        """Abort the iteration attempt when the barrier misses its deadline."""
        with self._lock:
            if self.finished or self.barrier_complete() or self._deadline is None:
                return
            if self.clock() < self._deadline:
                return
            missing = self.pending_nodes()
            self._pending.clear()
            self.attempt += 1
            self._deadline = None
            logger.warning("barrier_timeout iteration=%d attempt=%d missing=%s",
                           self.state.iteration, self.attempt, missing)
            raise BarrierTimeout(f"iteration {self.state.iteration}: no gradient from nodes {missing}")

    def _apply(self, gradient: np.ndarray) -> ServerState:
        if self.config.optimizer == OptimizerKind.sgd:
            return sgd_update(self.state, gradient, self.config.learning_rate, self.config.lam)
        adam = AdamConfig(alpha=self.config.learning_rate) if self.config.learning_rate else AdamConfig()
        return adam_update(self.state, gradient, adam)

    def _evaluate(self, indices: Sequence[int], theta: np.ndarray, threshold: float) -> ConvergenceCheck:
        ctx = self.context
        return convergence_test(
            ctx.spec, theta, [ctx.states[i] for i in indices], ctx.dataset.labels[list(indices)],
            threshold, ctx.profile(ctx.test_node), self.config.shots,
            (ctx.eval_seed, self.state.iteration), indices, self.config.strict_convergence,
        )

    def step(self) -> HistoryRow:
        with self._lock:
            if not self.barrier_complete():
                raise ProtocolError(f"barrier incomplete, waiting on nodes {self.pending_nodes()}")
            assignment = self.assignment()
            groups = self.context.partition.groups
            messages = list(self._pending.values())
            gradient = aggregate(messages, assignment, groups, len(self.state.theta))

            handoffs = 0
            if self.residuals is not None and self.threshold is not None:
                for message in messages:
                    self.residuals.absorb(message.group, message.indices, message.values,
                                          message.residual or [], self.threshold)
                if self._previous_assignment is not None:
                    handoffs = sum(a != b for a, b in zip(assignment, self._previous_assignment))
            elif self.config.compressed and self.threshold is None:
                self.threshold = auto_threshold(gradient.values, self.config.auto_threshold_percentile)
                logger.info("auto_threshold percentile=%.1f threshold=%.6f",
                            self.config.auto_threshold_percentile, self.threshold)

            exact_sq = None
            if self.config.track_exact_gradient:
                exact = exact_gradient(self.context, self.state.theta)
                exact_sq = float(exact @ exact)
            self.state = self._apply(gradient.values)
            transmitted = sum(len(m.indices) for m in messages)
            wall = max(m.circuit_executions for m in messages)
            self.state.ledger.record(transmitted, gradient.circuit_executions, wall, handoffs)

            dataset = self.context.dataset
            train = self._evaluate(dataset.train_idx, self.state.theta, self.config.convergence_threshold)
            test = self._evaluate(dataset.test_idx, self.state.theta, self.config.convergence_threshold)
            check = test if self.config.convergence_split == ConvergenceSplit.test else train
            loss = mse_loss(train.predictions, dataset.labels[list(dataset.train_idx)],
                            self.state.theta, self.config.lam)
            row = HistoryRow(
                iteration=self.state.iteration,
                loss=loss,
                train_acc=train.accuracy,
                test_acc=test.accuracy,
                grad_norm=float(np.linalg.norm(gradient.values)),
                exact_grad_sq=exact_sq,
                transmitted_components=transmitted,
                circuits=gradient.circuit_executions,
            )
            self.state.history.append(row)
            logger.debug("iteration=%d loss=%.4f train_acc=%.3f test_acc=%.3f sent=%d",
                         row.iteration, row.loss, row.train_acc, row.test_acc, transmitted)

            self._previous_assignment = assignment
            self.state.iteration += 1
            self.attempt = 0
            self._pending.clear()
            self._deadline = None

            if check.converged and not self.converged:
                self.converged = True
                self.converged_at = self.state.iteration
            done = self.converged and not self.config.run_to_cap
            if done or self.state.iteration >= self.config.max_iterations:
                self.finished = True
            return row

    def result(self) -> RunResult:
        ctx = self.context
        last = self.state.history[-1] if self.state.history else None
        final_gradient = None
        if self.config.final_gradient:
            final_gradient = exact_gradient(ctx, self.state.theta).tolist()
        if not self.converged:
            logger.warning("not_converged run=%d iterations=%d", ctx.repetition, self.state.iteration)
        return RunResult(
            run=ctx.repetition,
            seed=ctx.seed,
            converged=self.converged,
            iterations=self.converged_at if self.converged else self.state.iteration,
            test_node=ctx.test_node,
            final_theta=self.state.theta.tolist(),
            final_gradient=final_gradient,
            train_accuracy=last.train_acc if last else 0.0,
            test_accuracy=last.test_acc if last else 0.0,
            threshold=self.threshold,
            ledger=self.state.ledger,
            history=self.state.history,
            noise=ctx.instance,
        )


def exact_gradient(context: RunContext, theta: Sequence[float]) -> np.ndarray:
    """Shot-free noiseless gradient over the whole training set."""
    train_idx = list(context.dataset.train_idx)
    batch = Batch(tuple(context.states[i] for i in train_idx), context.dataset.labels[train_idx], tuple(train_idx))
    clean = context.spec.with_noise(NoiseMode.none)
    return parameter_shift_gradient(clean, batch, theta, lam=context.config.lam).values


def train(config: ExperimentConfig, dataset, repetition: int = 0) -> RunResult:
    """Broadcast, compute and update until the convergence test passes or the cap is hit."""
    started = time.perf_counter()
    context = RunContext.build(config, dataset, repetition)
    server = ParameterServer(context)
    transport = InProcessTransport(context.workers(), threads=config.threads)
    try:
        while not server.finished:
            payload = server.broadcast()
            for message in transport.exchange(payload):
                server.submit(message)
            server.step()
    finally:
        transport.close()
    result = server.result()
    if config.timed:
        result.elapsed_seconds = time.perf_counter() - started
    logger.info("run=%d converged=%s iterations=%d transmitted=%d circuits=%d",
                repetition, result.converged, result.iterations,
                result.ledger.transmitted, result.ledger.circuits)
    return result
