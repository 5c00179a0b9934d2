"""Threshold gradient compression with residual accumulation."""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Union

import numpy as np

from .errors import LedgerError, SpecError
from .models import CommLedger, ExperimentConfig, RunResult

logger = logging.getLogger(__name__)

Volume = Union[int, CommLedger]


@dataclass(frozen=True)
class ClipResult:
    transmit: np.ndarray
    keep: np.ndarray
    mask: np.ndarray

    @property
    def sent_positions(self) -> np.ndarray:
        return np.flatnonzero(self.mask)


def clip_and_mask(accumulated: Sequence[float], thr: float) -> ClipResult:
    """Split an accumulated gradient into the part sent (|g| > thr) and the part kept."""
    if thr < 0:
        raise SpecError(f"threshold must be non-negative, got {thr}")
    acc = np.asarray(accumulated, dtype=np.float64)
    mask = np.abs(acc) > thr
    transmit = np.where(mask, acc, 0.0)
    keep = np.where(mask, 0.0, acc)
    return ClipResult(transmit, keep, mask)


def compress_gradient(raw: Sequence[float], residual: Optional[Sequence[float]], thr: float) -> ClipResult:
    raw = np.asarray(raw, dtype=np.float64)
    accumulated = raw if residual is None else np.asarray(residual, dtype=np.float64) + raw
    return clip_and_mask(accumulated, thr)


class ResidualStore:
    """Residuals held per parameter group, so they follow the group between nodes."""

    def __init__(self, groups: Sequence[Sequence[int]]):
        self.groups = [tuple(g) for g in groups]
        self._residuals: Dict[int, np.ndarray] = {g: np.zeros(len(idx)) for g, idx in enumerate(self.groups)}
        self.sent_totals: Dict[int, np.ndarray] = {g: np.zeros(len(idx)) for g, idx in enumerate(self.groups)}

    def residual(self, group: int) -> np.ndarray:
        return self._residuals[group].copy()

    def snapshot(self) -> Dict[int, list]:
        return {g: r.tolist() for g, r in self._residuals.items()}

    def absorb(self, group: int, indices: Sequence[int], values: Sequence[float],
               keep: Sequence[float], thr: float) -> None:
        """Record what a node sent for `group` and the residual it kept."""
        keep = np.asarray(keep, dtype=np.float64)
        members = self.groups[group]
        if keep.size != len(members):
            raise LedgerError(f"residual for group {group} has {keep.size} entries, expected {len(members)}")
        if np.any(np.abs(keep) > thr):
            raise LedgerError(f"residual for group {group} exceeds threshold {thr}")
        position = {p: k for k, p in enumerate(members)}
        for index, value in zip(indices, values):
            self.sent_totals[group][position[index]] += value
        self._residuals[group] = keep

    def accounted(self, group: int) -> np.ndarray:
        """Everything a group's raw gradients have contributed so far: sent plus residual."""
        return self.sent_totals[group] + self._residuals[group]


def auto_threshold(values: Sequence[float], percentile: float) -> float:
    """Threshold at a percentile of the absolute gradient components."""
    if not 0 < percentile < 100:
        raise SpecError(f"percentile must lie in (0, 100), got {percentile}")
    magnitudes = np.abs(np.asarray(values, dtype=np.float64))
    if magnitudes.size == 0:
        raise SpecError("auto threshold needs at least one gradient component")
    return float(np.percentile(magnitudes, percentile))


def _volume(value: Volume) -> int:
    if isinstance(value, CommLedger):
        return value.transmitted
    return int(value)


def compression_ratio(with_compression: Volume, without_compression: Volume) -> float:
    """1 - CV_with / CV_without."""
    cv_with = _volume(with_compression)
    cv_without = _volume(without_compression)
    if cv_without <= 0:
        raise LedgerError("compression ratio undefined: uncompressed volume is zero")
    return 1.0 - cv_with / cv_without


def train_compressed(config: ExperimentConfig, dataset, repetition: int = 0) -> RunResult:
    if not config.compressed:
        raise SpecError("train_compressed needs a threshold or an auto threshold percentile")
    from .runtime import train

    return train(config, dataset, repetition)
