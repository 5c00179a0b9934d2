"""Heterogeneous noise instances and the Differ heterogeneity metric."""
import json
import logging
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.stats import entropy

from .engine import Seed
from .errors import InfeasibleTarget, MetricError
from .models import NoiseGeneration, NoiseInstance, NoiseProfile

logger = logging.getLogger(__name__)

DEFAULT_MEAN = 0.04
FEASIBILITY_MARGIN = 1e-3
BISECTION_TOL = 1e-13
MAX_DIRECTION_DRAWS = 64
SIMPLEX_CONSTRUCTION = "simplex-interpolation"


def profiles_from_p1(p1_values: Sequence[float]) -> list:
    profiles = [NoiseProfile.from_p1(i, float(p)) for i, p in enumerate(p1_values)]
    clamped = [p.node_id for p in profiles if p.p2 < 4.0 * p.p1]
    if clamped:
        logger.warning("two_qubit_probability_clamped nodes=%s", clamped)
    return profiles


def sample_gaussian_profiles(nodes: int, mu: float, seed: Seed = None) -> NoiseInstance:
    """p_i ~ N(mu, (mu/9)^2), clamped to [0, 1]."""
    rng = np.random.default_rng(seed)
    draws = np.clip(rng.normal(mu, mu / 9.0, size=nodes), 0.0, 1.0)
    return NoiseInstance(profiles=profiles_from_p1(draws), mu=mu, generation=NoiseGeneration.gaussian)


def _kl_from_uniform(distribution: np.ndarray) -> float:
    return float(entropy(distribution, np.full(distribution.size, 1.0 / distribution.size)))


def differ_metric(instance: Union[NoiseInstance, Sequence[float]]) -> float:
    """KL divergence (natural log) of the normalized p1 distribution from uniform."""
    p = np.asarray(instance.p1_values if isinstance(instance, NoiseInstance) else instance, dtype=np.float64)
    total = p.sum()
    if total <= 0:
        raise MetricError("Differ is undefined when every node is noiseless")
    return _kl_from_uniform(p / total)


def _ray_end(direction: np.ndarray, uniform: np.ndarray) -> float:
    """Largest s keeping (1 - s) * uniform + s * direction inside the simplex."""
    below = direction < uniform
    if not below.any():
        return 1.0
    return float(np.min(uniform[below] / (uniform[below] - direction[below])))


def generate_profiles_for_differ(
    nodes: int,
    target: float,
    mean: float = DEFAULT_MEAN,
    seed: Seed = None,
) -> NoiseInstance:
    """Profiles with the given mean p1 and Differ equal to `target`.

    Draws a random simplex direction, walks the ray from uniform towards it and
    bisects on the (monotone) KL along the ray. Directions that cannot reach the
    target fall back to a random simplex vertex.
    """
    if nodes < 1:
        raise InfeasibleTarget("need at least one node")
    ceiling = np.log(nodes) - FEASIBILITY_MARGIN
    if target < 0 or (target > 0 and target > ceiling):
        raise InfeasibleTarget(f"Differ {target} not reachable with {nodes} nodes (max {ceiling:.4f})")

    uniform = np.full(nodes, 1.0 / nodes)
    if target == 0:
        distribution = uniform
    else:
        rng = np.random.default_rng(seed)
        distribution = None
        for _ in range(MAX_DIRECTION_DRAWS):
            direction = rng.dirichlet(np.ones(nodes))
            s_max = _ray_end(direction, uniform)
            if _kl_from_uniform(np.clip((1 - s_max) * uniform + s_max * direction, 0, None)) >= target:
                distribution = _bisect_ray(uniform, direction, s_max, target)
                break
        if distribution is None:
            vertex = np.zeros(nodes)
            vertex[rng.integers(nodes)] = 1.0
            distribution = _bisect_ray(uniform, vertex, 1.0, target)

    p1 = distribution * nodes * mean
    instance = NoiseInstance(
        profiles=profiles_from_p1(p1),
        mu=mean,
        generation=NoiseGeneration.differ,
        target_differ=target,
        construction=SIMPLEX_CONSTRUCTION,
    )
    logger.debug("differ_instance nodes=%d target=%.6f achieved=%.6f", nodes, target,
                 differ_metric(instance) if target > 0 else 0.0)
    return instance


def _bisect_ray(uniform: np.ndarray, direction: np.ndarray, s_max: float, target: float) -> np.ndarray:
    def point(s: float) -> np.ndarray:
        return np.clip((1 - s) * uniform + s * direction, 0.0, None)

    grid = np.linspace(0.0, s_max, 17)
    kl_grid = np.array([_kl_from_uniform(point(s)) for s in grid])
    assert np.all(np.diff(kl_grid) >= -1e-12), "KL along the interpolation ray must be nondecreasing"

    low, high = 0.0, s_max
    while high - low > BISECTION_TOL:
        mid = 0.5 * (low + high)
        if _kl_from_uniform(point(mid)) < target:
            low = mid
        else:
            high = mid
    return point(0.5 * (low + high))


def save_instance(instance: NoiseInstance, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(instance.model_dump_json(indent=2))
    return path


def load_instance(path: Union[str, Path]) -> NoiseInstance:
    return NoiseInstance.model_validate(json.loads(Path(path).read_text()))
