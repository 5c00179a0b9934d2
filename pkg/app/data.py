"""Iris ingestion: versicolor (label 0) vs virginica (label 1)."""
import logging
import os
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.datasets import load_iris as sklearn_iris
from sklearn.model_selection import train_test_split

from .errors import DataError, ParseError

logger = logging.getLogger(__name__)

# Dataset location - use IRIS_PATH env var, fallback to the copy bundled with scikit-learn
IRIS_PATH = os.environ.get("IRIS_PATH")

LABELS = {"versicolor": 0, "virginica": 1}
IGNORED = {"setosa"}
PER_CLASS = 50
TRAIN_FRACTION = 0.75
MAX_FIELDS = 8


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    train_idx: Tuple[int, ...] = ()
    test_idx: Tuple[int, ...] = ()
    seed: Optional[int] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.features)):
            raise DataError("features must be finite")
        if np.any(np.linalg.norm(self.features, axis=1) == 0):
            raise DataError("every example needs a nonzero feature vector")

    def __len__(self) -> int:
        return len(self.labels)

    def example(self, index: int) -> Example:
        return Example(self.features[index], int(self.labels[index]))

    def split(self, seed: int, train_fraction: float = TRAIN_FRACTION) -> "Dataset":
        """Seeded random train/test split over example indices."""
        train, test = train_test_split(
            np.arange(len(self)), train_size=train_fraction, random_state=seed, shuffle=True
        )
        return replace(self, train_idx=tuple(int(i) for i in train), test_idx=tuple(int(i) for i in test), seed=seed)

    def normalized(self) -> "Dataset":
        """Each feature divided by its largest magnitude over the dataset."""
        scale = np.abs(self.features).max(axis=0)
        scale[scale == 0] = 1.0
        return replace(self, features=self.features / scale)


def _species(raw: str) -> str:
    name = raw.strip().lower()
    return name[len("iris-"):] if name.startswith("iris-") else name


def _check_counts(labels: List[int]) -> None:
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=2)
    if counts[0] != PER_CLASS or counts[1] != PER_CLASS:
        raise DataError(f"expected {PER_CLASS} versicolor and {PER_CLASS} virginica, got {counts[0]} and {counts[1]}")


def _overlong_line(path: Path, exc: Exception) -> int:
    match = re.search(r"in line (\d+)", str(exc))
    if match:
        return int(match.group(1))
    for number, text in enumerate(path.read_text().splitlines(), start=1):
        if text.count(",") >= MAX_FIELDS:
            return number
    return 0


def load_iris(path: Union[str, Path]) -> Dataset:
    """Read a CSV with four numeric columns followed by a species column."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Iris file not found: {path}")

    try:
        frame = pd.read_csv(
            path, header=None, names=list(range(MAX_FIELDS)), dtype=str,
            skip_blank_lines=False, keep_default_na=False,
        )
    except pd.errors.ParserError as exc:
        raise ParseError(f"more than {MAX_FIELDS} fields", _overlong_line(path, exc)) from exc
    features, labels = [], []
    for index, row in frame.iterrows():
        line = index + 1
        cells = [c.strip() for c in row.tolist() if isinstance(c, str) and c.strip()]
        if not cells:
            continue
        if len(cells) < 5:
            raise ParseError(f"expected 4 features and a species, got {len(cells)} fields", line)
        try:
            values = [float(c) for c in cells[:4]]
        except ValueError:
            if line == 1:
                continue  # header
            raise ParseError(f"non-numeric feature in {cells[:4]}", line)
        species = _species(cells[-1])
        if species in IGNORED:
            continue
        if species not in LABELS:
            raise ParseError(f"unknown species {cells[-1]!r}", line)
        features.append(values)
        labels.append(LABELS[species])

    _check_counts(labels)
    logger.info("iris_loaded path=%s examples=%d", path, len(labels))
    return Dataset(np.asarray(features, dtype=np.float64), np.asarray(labels, dtype=int))


def load_default_iris(path: Optional[Union[str, Path]] = None) -> Dataset:
    path = path or IRIS_PATH
    if path:
        return load_iris(path)
    bunch = sklearn_iris()
    keep = bunch.target > 0
    features = bunch.data[keep].astype(np.float64)
    labels = (bunch.target[keep] - 1).astype(int)
    _check_counts(labels.tolist())
    return Dataset(features, labels)
