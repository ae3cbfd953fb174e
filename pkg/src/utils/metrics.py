"""
Evaluation metrics: accuracy, NLL, top-label ECE, cosine similarity and
inferred concentration diagnostics.

Confidence bins are (i/n, (i+1)/n] for i >= 1 and [0, 1/n] for the first one,
so a confidence lying exactly on an edge is counted in the lower bin.
"""

from dataclasses import dataclass, field
from typing import List, NamedTuple, Tuple

import numpy as np
from scipy import stats

from src.sphere.klvar import EffNoiseSpec, kappa_from_sigma_eff
from src.sphere.special_fn import bessel_ratio
from src.utils.errors import DomainError

ECE_BINS = 15
PROB_SUM_TOL = 1e-6
LOG_FLOOR = 1e-300


class BinStat(NamedTuple):
    confidence: float
    accuracy: float
    count: int


@dataclass
class CalibrationReport:
    accuracy: float
    nll: float
    ece: float
    bin_stats: List[BinStat] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "nll": self.nll,
            "ece": self.ece,
            "bins": [stat._asdict() for stat in self.bin_stats],
        }


def _validate(probabilities, labels) -> Tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(probabilities, dtype=float)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise DomainError(f"probabilities must be a nonempty (n, K) array, got shape {probs.shape}")
    if labels.shape != (probs.shape[0],):
        raise DomainError("labels must hold one entry per probability row")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise DomainError("labels must be integers")
        labels = labels.astype(int)
    if np.any(labels < 0) or np.any(labels >= probs.shape[1]):
        raise DomainError("labels outside the class range")
    if np.any(~np.isfinite(probs)) or np.any(probs < 0.0):
        raise DomainError("probabilities must be finite and nonnegative")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > PROB_SUM_TOL):
        raise DomainError("each probability vector must sum to 1")
    return probs, labels


def accuracy(probabilities, labels) -> float:
    probs, labels = _validate(probabilities, labels)
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def negative_log_likelihood(probabilities, labels) -> float:
    probs, labels = _validate(probabilities, labels)
    picked = probs[np.arange(labels.size), labels]
    return float(-np.mean(np.log(np.maximum(picked, LOG_FLOOR))))


def bin_index(confidence: np.ndarray, n_bins: int) -> np.ndarray:
    return np.clip(np.ceil(confidence * n_bins).astype(int) - 1, 0, n_bins - 1)


def ece(probabilities, labels, n_bins: int = ECE_BINS) -> CalibrationReport:
    """Top-label expected calibration error over equal-width confidence bins"""
    if int(n_bins) < 1:
        raise DomainError(f"n_bins must be >= 1, got {n_bins}")
    probs, labels = _validate(probabilities, labels)
    confidence = probs.max(axis=1)
    correct = (np.argmax(probs, axis=1) == labels).astype(float)
    bins = bin_index(confidence, int(n_bins))

    n = labels.size
    total = 0.0
    bin_stats = []
    for b in range(int(n_bins)):
        mask = bins == b
        count = int(mask.sum())
        if count == 0:
            bin_stats.append(BinStat(0.0, 0.0, 0))
            continue
        conf_b = float(confidence[mask].mean())
        acc_b = float(correct[mask].mean())
        total += count / n * abs(acc_b - conf_b)
        bin_stats.append(BinStat(conf_b, acc_b, count))

    picked = probs[np.arange(n), labels]
    return CalibrationReport(
        accuracy=float(correct.mean()),
        nll=float(-np.mean(np.log(np.maximum(picked, LOG_FLOOR)))),
        ece=float(total),
        bin_stats=bin_stats,
    )


def reliability_curve(report: CalibrationReport) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(confidence, accuracy, count) arrays of the nonempty bins"""
    filled = [s for s in report.bin_stats if s.count > 0]
    return (
        np.array([s.confidence for s in filled]),
        np.array([s.accuracy for s in filled]),
        np.array([s.count for s in filled], dtype=int),
    )


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine similarity of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def inferred_mean_resultant(sigma_eff: float, D: int) -> float:
    """A_D at the diagnostic concentration implied by sigma_eff"""
    return bessel_ratio(D, kappa_from_sigma_eff(EffNoiseSpec(sigma_eff, D)))


def spearman(x, y) -> float:
    return float(stats.spearmanr(x, y)[0])


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    return float(stats.pearsonr(x, y)[0])
