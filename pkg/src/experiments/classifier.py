"""
Calibration study: variational MLP against a deterministic baseline

Both runs see the same data and the same initial weights. The method trains
with beta > 0 and KL warm-up; the baseline has no KL term and its noise frozen
near zero. Each run is evaluated with the deterministic pass and with
mc_samples noisy passes.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.experiments.datasets import Dataset, DatasetConfig, load_dataset
from src.utils.errors import ConfigError
from src.utils.log_manager import log_manager
from src.utils.metrics import CalibrationReport
from src.utils.rng import substream
from src.varnet.model import NoisyMLP, Task
from src.varnet.training import TrainConfig, TrainRecord, evaluate, train

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = (256, 256)
BASELINE_SIGMA_EFF = 1e-6
ACCURACY_MARGIN = 0.02
MODEL_STREAM = 5
PREDICT_STREAM = 6


def baseline_config(method: TrainConfig) -> TrainConfig:
    """Same schedule as the method with the KL term removed and the noise frozen"""
    return replace(method, beta_max=0.0, warmup_epochs=0, freeze_noise=True,
                   init_sigma_eff=BASELINE_SIGMA_EFF)


@dataclass
class RunSummary:
    label: str
    seed: int
    deterministic: CalibrationReport
    sampled: Optional[CalibrationReport]
    records: List[TrainRecord] = field(default_factory=list)
    model: Optional[NoisyMLP] = None

    @property
    def sigma_profile(self) -> List[float]:
        return self.records[-1].per_layer_sigma_eff if self.records else []

    def row(self) -> Dict:
        row = {
            "run": self.label,
            "seed": self.seed,
            "accuracy": self.deterministic.accuracy,
            "nll": self.deterministic.nll,
            "ece": self.deterministic.ece,
            "mc_accuracy": self.sampled.accuracy if self.sampled else None,
            "mc_nll": self.sampled.nll if self.sampled else None,
            "mc_ece": self.sampled.ece if self.sampled else None,
        }
        for i, sigma in enumerate(self.sigma_profile):
            row[f"sigma_eff_{i}"] = sigma
        return row


@dataclass
class StudyResult:
    method: RunSummary
    baseline: RunSummary


def build_classifier(data: Dataset, config: TrainConfig, hidden: Sequence[int]) -> NoisyMLP:
    return NoisyMLP.build(
        data.x_train.shape[1], list(hidden), data.n_classes, substream(config.seed, MODEL_STREAM),
        task=Task.CLASSIFICATION, init_sigma_eff=config.init_sigma_eff,
        bn_momentum=config.bn_momentum, bn_epsilon=config.bn_epsilon,
        parameterization=config.parameterization, freeze_noise=config.freeze_noise,
    )


def train_and_evaluate(label: str, data: Dataset, config: TrainConfig,
                       hidden: Sequence[int] = DEFAULT_HIDDEN) -> RunSummary:
    config = replace(config, dataset_size=config.dataset_size or data.x_train.shape[0]).validate()
    model = build_classifier(data, config, hidden)
    records = train(model, data.x_train, data.y_train, config, eval_set=(data.x_test, data.y_test))
    deterministic = evaluate(model, data.x_test, data.y_test)
    sampled = None
    if config.mc_samples > 0:
        sampled = evaluate(model, data.x_test, data.y_test, config.mc_samples,
                           substream(config.seed, PREDICT_STREAM))
    log_manager.log_experiment('info', f"{label} run finished", seed=config.seed,
                               accuracy=deterministic.accuracy, ece=deterministic.ece)
    return RunSummary(label, config.seed, deterministic, sampled, records, model)


def classifier_study(dataset_cfg: DatasetConfig, method_cfg: TrainConfig,
                     baseline_cfg: Optional[TrainConfig] = None,
                     hidden: Sequence[int] = DEFAULT_HIDDEN) -> StudyResult:
    """Train method and baseline on identical data and initial weights"""
    if method_cfg.beta_max <= 0:
        raise ConfigError("the method run needs beta_max > 0")
    baseline_cfg = baseline_cfg or baseline_config(method_cfg)
    if baseline_cfg.seed != method_cfg.seed:
        raise ConfigError("method and baseline must share a seed")
    data = load_dataset(dataset_cfg)
    return StudyResult(
        method=train_and_evaluate("method", data, method_cfg, hidden),
        baseline=train_and_evaluate("baseline", data, baseline_cfg, hidden),
    )


def calibration_comparison(dataset_cfg: DatasetConfig, method_cfg: TrainConfig, seeds: Sequence[int],
                           hidden: Sequence[int] = DEFAULT_HIDDEN) -> Dict:
    """Repeat the study over seeds; medians and the two acceptance flags"""
    if not seeds:
        raise ConfigError("at least one seed is required")
    rows = []
    studies = []
    for seed in seeds:
        cfg = replace(method_cfg, seed=int(seed))
        study = classifier_study(dataset_cfg, cfg, hidden=hidden)
        studies.append(study)
        rows.extend([study.method.row(), study.baseline.row()])

    def median(label: str, key: str) -> float:
        return float(np.median([r[key] for r in rows if r["run"] == label]))

    summary = {
        "seeds": list(seeds),
        "method_ece": median("method", "ece"),
        "baseline_ece": median("baseline", "ece"),
        "method_accuracy": median("method", "accuracy"),
        "baseline_accuracy": median("baseline", "accuracy"),
    }
    summary["ece_not_worse"] = summary["method_ece"] <= summary["baseline_ece"]
    summary["accuracy_kept"] = summary["method_accuracy"] >= summary["baseline_accuracy"] - ACCURACY_MARGIN
    summary["passed"] = summary["ece_not_worse"] and summary["accuracy_kept"]
    logger.info(f"calibration comparison: method ECE {summary['method_ece']:.4f}, "
                f"baseline ECE {summary['baseline_ece']:.4f}")
    return {"rows": rows, "summary": summary, "studies": studies}
