"""
Data sources for the studies

- linear teacher regression: x ~ N(0, I_D), y = w*^T x + eta
- synthetic classification: Gaussian clusters around class centres on a
  sphere shell, with a fraction of labels resampled uniformly
- CSV ingestion for user-supplied classification data
"""

import csv
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from src.utils.errors import ConfigError, DomainError
from src.utils.rng import substream

logger = logging.getLogger(__name__)

# stream indices under the dataset seed
TEACHER_STREAM = 0
TRAIN_STREAM = 1
TEST_STREAM = 2


class Dataset(NamedTuple):
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int


class TeacherData(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    teacher: np.ndarray


@dataclass(frozen=True)
class DatasetConfig:
    """Synthetic classification task, or a CSV file when `csv_path` is set"""
    n_classes: int = 10
    dim: int = 128
    n_train: int = 20_000
    n_test: int = 5_000
    shell_radius: float = 3.0
    cluster_std: float = 1.0
    label_noise: float = 0.1
    seed: int = 0
    csv_path: Optional[str] = None
    label_column: str = "label"
    test_fraction: float = 0.2

    def validate(self) -> "DatasetConfig":
        if self.csv_path is None:
            if self.n_classes < 2:
                raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
            if self.dim < 2:
                raise ConfigError(f"dim must be >= 2, got {self.dim}")
            if self.n_train < 2 or self.n_test < 1:
                raise ConfigError("n_train must be >= 2 and n_test >= 1")
            if self.shell_radius <= 0 or self.cluster_std <= 0:
                raise ConfigError("shell_radius and cluster_std must be positive")
            if not 0.0 <= self.label_noise < 1.0:
                raise ConfigError(f"label_noise must lie in [0, 1), got {self.label_noise}")
        elif not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetConfig":
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"unknown dataset config keys: {', '.join(unknown)}")
        return cls(**data).validate()


def unit_vector(rng: np.random.Generator, D: int) -> np.ndarray:
    v = rng.standard_normal(D)
    return v / np.linalg.norm(v)


def linear_teacher(D: int, n_samples: int, obs_noise: float, seed: int, *stream: int) -> TeacherData:
    """Unit-norm teacher and n_samples noisy observations of it"""
    if D < 2 or n_samples < 2:
        raise DomainError(f"need D >= 2 and at least 2 samples, got D={D}, N={n_samples}")
    if obs_noise < 0:
        raise DomainError(f"obs_noise must be >= 0, got {obs_noise}")
    teacher = unit_vector(substream(seed, *stream, TEACHER_STREAM), D)
    rng = substream(seed, *stream, TRAIN_STREAM)
    x = rng.standard_normal((n_samples, D))
    y = x @ teacher + obs_noise * rng.standard_normal(n_samples)
    return TeacherData(x, y, teacher)


def _clusters(centres: np.ndarray, n: int, config: DatasetConfig, rng: np.random.Generator):
    labels = rng.integers(0, config.n_classes, size=n)
    x = centres[labels] + config.cluster_std * rng.standard_normal((n, config.dim))
    flip = rng.random(n) < config.label_noise
    labels = np.where(flip, rng.integers(0, config.n_classes, size=n), labels)
    return x, labels


def synthetic_classification(config: DatasetConfig) -> Dataset:
    config.validate()
    centre_rng = substream(config.seed, TEACHER_STREAM)
    centres = np.stack([unit_vector(centre_rng, config.dim) for _ in range(config.n_classes)])
    centres *= config.shell_radius
    x_train, y_train = _clusters(centres, config.n_train, config, substream(config.seed, TRAIN_STREAM))
    x_test, y_test = _clusters(centres, config.n_test, config, substream(config.seed, TEST_STREAM))
    return Dataset(x_train, y_train, x_test, y_test, config.n_classes)


def load_csv_dataset(config: DatasetConfig) -> Dataset:
    """Numeric feature columns plus an integer label column; split with the config seed"""
    config.validate()
    path = Path(config.csv_path)
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(line for line in f if not line.startswith("#")))
    except OSError as e:
        logger.error(f"Cannot read dataset {path}: {e}")
        raise
    if len(rows) < 3:
        raise ConfigError(f"dataset {path} needs at least 3 rows")
    if config.label_column not in rows[0]:
        raise ConfigError(f"dataset {path} has no column {config.label_column!r}")

    features = [c for c in rows[0] if c != config.label_column]
    try:
        x = np.array([[float(row[c]) for c in features] for row in rows])
        raw = np.array([float(row[config.label_column]) for row in rows])
    except ValueError as e:
        raise ConfigError(f"dataset {path} has a non-numeric entry: {e}") from e
    if not np.all(raw == np.round(raw)) or np.any(raw < 0):
        raise ConfigError("labels must be nonnegative integers")
    y = raw.astype(int)

    order = substream(config.seed, TRAIN_STREAM).permutation(len(rows))
    n_test = max(1, int(round(config.test_fraction * len(rows))))
    test, train = order[:n_test], order[n_test:]
    logger.info(f"Loaded {len(rows)} rows with {len(features)} features from {path}")
    return Dataset(x[train], y[train], x[test], y[test], int(y.max()) + 1)


def load_dataset(config: DatasetConfig) -> Dataset:
    if config.csv_path:
        return load_csv_dataset(config)
    return synthetic_classification(config)
