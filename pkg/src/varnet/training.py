"""
Training engine for the variational unit

    loss = NLL + beta * kl_scale * sum_l M_l * KL_approx(sigma_eff_l, D_l)

objective() evaluates the loss, backward_and_step() applies one optimizer
update with exact reparameterized gradients, train() runs the epoch loop with
KL warm-up, predict() returns deterministic or Monte Carlo predictions, and
gradient_check() compares analytic gradients with central differences.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from src.sphere.klvar import Parameterization
from src.utils.errors import ConfigError, DomainError, GradientExplosionError, NonFiniteLossError
from src.utils.log_manager import log_manager
from src.utils.metrics import CalibrationReport, ece
from src.utils.rng import make_rng
from src.varnet.layers import DEFAULT_BN_EPSILON, DEFAULT_BN_MOMENTUM, DEFAULT_SIGMA_EFF
from src.varnet.model import (
    EVALUATION,
    FROZEN_TRAINING,
    LOG_2PI,
    MC_PREDICTION,
    TRAINING,
    DirectionalRegressor,
    ForwardMode,
    NoisyMLP,
    Task,
)
from src.varnet.optim import Optimizer, OptimizerKind, build_optimizer

logger = logging.getLogger(__name__)

Model = Union[NoisyMLP, DirectionalRegressor]
Batch = Tuple[np.ndarray, np.ndarray]

DEFAULT_GRAD_NORM_CAP = 1e6
FD_STEP = 1e-6
FD_RTOL = 1e-4
FD_ATOL = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    beta_max: float = 1.0
    warmup_epochs: int = 5
    epochs: int = 20
    batch_size: int = 256
    lr_base: float = 1e-3
    lr_noise: float = 2e-2
    seed: int = 0
    optimizer: OptimizerKind = OptimizerKind.ADAM
    bn_momentum: float = DEFAULT_BN_MOMENTUM
    bn_epsilon: float = DEFAULT_BN_EPSILON
    dataset_size: Optional[int] = None
    grad_norm_cap: float = DEFAULT_GRAD_NORM_CAP
    freeze_noise: bool = False
    init_sigma_eff: float = DEFAULT_SIGMA_EFF
    parameterization: Parameterization = Parameterization.SOFTPLUS
    mc_samples: int = 8

    def validate(self) -> "TrainConfig":
        if not 0.0 <= self.beta_max <= 1.0:
            raise ConfigError(f"beta_max must lie in [0, 1], got {self.beta_max}")
        if self.warmup_epochs < 0:
            raise ConfigError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2 for batch statistics, got {self.batch_size}")
        if self.lr_base <= 0 or self.lr_noise <= 0:
            raise ConfigError("learning rates must be positive")
        if self.seed is None or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed}")
        if not 0.0 < self.bn_momentum <= 1.0:
            raise ConfigError(f"bn_momentum must lie in (0, 1], got {self.bn_momentum}")
        if self.bn_epsilon <= 0:
            raise ConfigError(f"bn_epsilon must be positive, got {self.bn_epsilon}")
        if self.dataset_size is not None and self.dataset_size < 1:
            raise ConfigError(f"dataset_size must be >= 1, got {self.dataset_size}")
        if self.grad_norm_cap <= 0:
            raise ConfigError(f"grad_norm_cap must be positive, got {self.grad_norm_cap}")
        if not self.init_sigma_eff > 0:
            raise ConfigError(f"init_sigma_eff must be positive, got {self.init_sigma_eff}")
        if self.mc_samples < 0:
            raise ConfigError(f"mc_samples must be >= 0, got {self.mc_samples}")
        try:
            OptimizerKind(self.optimizer)
            Parameterization(self.parameterization)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return self

    def to_dict(self) -> dict:
        data = asdict(self)
        data["optimizer"] = OptimizerKind(self.optimizer).value
        data["parameterization"] = Parameterization(self.parameterization).value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown training config keys: {', '.join(unknown)}")
        values = dict(data)
        try:
            if "optimizer" in values:
                values["optimizer"] = OptimizerKind(values["optimizer"])
            if "parameterization" in values:
                values["parameterization"] = Parameterization(values["parameterization"])
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return cls(**values).validate()


@dataclass
class TrainRecord:
    """Epoch aggregate; loss = nll + kl_weight * kl_total for the batch means"""
    epoch: int
    beta: float
    kl_weight: float
    nll: float
    kl_total: float
    loss: float
    per_layer_sigma_eff: List[float] = field(default_factory=list)
    eval_accuracy: Optional[float] = None
    eval_nll: Optional[float] = None
    eval_ece: Optional[float] = None
    steps: int = 0

    def as_row(self) -> dict:
        row = asdict(self)
        sigmas = row.pop("per_layer_sigma_eff")
        for i, s in enumerate(sigmas):
            row[f"sigma_eff_{i}"] = s
        return row


class LossTerms(NamedTuple):
    loss: float
    nll: float
    kl_total: float


class StepResult(NamedTuple):
    terms: LossTerms
    kl_weight: float
    grad_norm: float


class GradientCheckReport(NamedTuple):
    checked: int
    passed: int
    worst_relative_error: float
    failures: List[str]

    @property
    def fraction_passed(self) -> float:
        return self.passed / self.checked if self.checked else 1.0


def beta_schedule(epoch: int, config: TrainConfig) -> float:
    """Linear KL warm-up from 0 to beta_max over warmup_epochs"""
    if config.warmup_epochs == 0:
        return float(config.beta_max)
    return min(1.0, epoch / config.warmup_epochs) * float(config.beta_max)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _class_labels(y, n_classes: int) -> np.ndarray:
    labels = np.asarray(y)
    if labels.ndim != 1 or not np.all(np.equal(np.mod(labels, 1), 0)):
        raise DomainError("classification targets must be a vector of integer labels")
    labels = labels.astype(int)
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise DomainError("labels outside the class range")
    return labels


def nll_and_grad(model: Model, outputs: np.ndarray, y) -> Tuple[float, np.ndarray, Optional[float]]:
    """Mean NLL, dNLL/d(outputs) and dNLL/d(log_var) (regression only)"""
    if model.task is Task.CLASSIFICATION:
        labels = _class_labels(y, outputs.shape[1])
        n = labels.size
        shifted = outputs - outputs.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1))
        picked = shifted[np.arange(n), labels]
        nll = float(np.mean(log_norm - picked))
        grad = np.exp(shifted - log_norm[:, None])
        grad[np.arange(n), labels] -= 1.0
        return nll, grad / n, None

    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape != outputs.shape:
        raise DomainError("regression targets must match the prediction shape")
    log_var = float(model.log_var)
    var = math.exp(log_var)
    residual = y - outputs
    nll = float(0.5 * np.mean(LOG_2PI + log_var + residual ** 2 / var))
    grad = -residual / (var * y.size)
    grad_log_var = float(0.5 * np.mean(1.0 - residual ** 2 / var))
    return nll, grad, grad_log_var


def kl_total(model: Model) -> float:
    return float(sum(p.kl() for p in model.noise_params()))


def _loss_terms(nll: float, kl: float, kl_weight: float) -> LossTerms:
    loss = nll + kl_weight * kl
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss (nll={nll}, kl_total={kl})")
    return LossTerms(loss, nll, kl)


def objective(model: Model, batch: Batch, beta: float, *, kl_scale: float = 1.0,
              mode: ForwardMode = FROZEN_TRAINING, rng: Optional[np.random.Generator] = None,
              noise: Optional[List[np.ndarray]] = None) -> LossTerms:
    """(loss, nll, kl_total) with loss = nll + beta * kl_scale * kl_total"""
    if not 0.0 <= beta <= 1.0:
        raise DomainError(f"beta must lie in [0, 1], got {beta}")
    x, y = batch
    outputs, _ = model.forward(x, mode, rng=rng, noise=noise)
    nll, _, _ = nll_and_grad(model, outputs, y)
    return _loss_terms(nll, kl_total(model), beta * kl_scale)


def loss_and_grads(model: Model, batch: Batch, beta: float, *, kl_scale: float = 1.0,
                   mode: ForwardMode = TRAINING, rng: Optional[np.random.Generator] = None,
                   noise: Optional[List[np.ndarray]] = None) -> Tuple[LossTerms, Dict[str, np.ndarray]]:
    x, y = batch
    outputs, cache = model.forward(x, mode, rng=rng, noise=noise)
    nll, grad_out, grad_log_var = nll_and_grad(model, outputs, y)
    kl_weight = beta * kl_scale
    terms = _loss_terms(nll, kl_total(model), kl_weight)

    grads = model.backward(grad_out, cache)
    if grad_log_var is not None:
        grads["log_var"] = np.array(grad_log_var)
    for name, param in model.named_noise_params():
        grads[name] = grads[name] + kl_weight * param.kl_grad_rho()
    return terms, grads


def gradient_norm(model: Model, grads: Dict[str, np.ndarray]) -> float:
    total = 0.0
    for param in model.parameters():
        if param.trainable and param.name in grads:
            total += float(np.sum(np.square(grads[param.name])))
    return math.sqrt(total)


def backward_and_step(model: Model, batch: Batch, config: TrainConfig, rng: np.random.Generator, *,
                      optimizer: Optional[Optimizer] = None, beta: Optional[float] = None,
                      kl_scale: Optional[float] = None, mode: ForwardMode = TRAINING) -> StepResult:
    """One optimizer update followed by row renormalization"""
    if beta is None:
        beta = float(config.beta_max)
    if kl_scale is None:
        kl_scale = 1.0 / config.dataset_size if config.dataset_size else 1.0
    if optimizer is None:
        optimizer = build_optimizer(config.optimizer, config.lr_base, config.lr_noise)

    terms, grads = loss_and_grads(model, batch, beta, kl_scale=kl_scale, mode=mode, rng=rng)
    norm = gradient_norm(model, grads)
    if not math.isfinite(norm) or norm > config.grad_norm_cap:
        raise GradientExplosionError(norm, config.grad_norm_cap)

    optimizer.step(model.parameters(), grads)
    model.renormalize()
    return StepResult(terms, beta * kl_scale, norm)


def evaluate(model: NoisyMLP, x: np.ndarray, y, mc_samples: int = 0,
             rng: Optional[np.random.Generator] = None) -> CalibrationReport:
    """Accuracy, NLL and ECE of the predictive distribution"""
    if model.task is not Task.CLASSIFICATION:
        raise DomainError("calibration metrics apply to classifiers only")
    return ece(predict(model, x, mc_samples, rng), _class_labels(y, model.out_dim))


def train(model: Model, x: np.ndarray, y, config: TrainConfig,
          eval_set: Optional[Batch] = None,
          on_epoch: Optional[Callable[[TrainRecord], None]] = None) -> List[TrainRecord]:
    """Minibatch training with warm-up; returns one TrainRecord per epoch

    Batches shorter than 2 examples are dropped (batch statistics need 2).
    """
    config.validate()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    n = x.shape[0]
    if n < 2 or y.shape[0] != n:
        raise DomainError("training data needs at least 2 examples and one target per row")

    rng = make_rng(config.seed)
    optimizer = build_optimizer(config.optimizer, config.lr_base, config.lr_noise)
    kl_scale = 1.0 / (config.dataset_size or n)
    records = []

    for epoch in range(config.epochs):
        beta = beta_schedule(epoch, config)
        order = rng.permutation(n)
        nll_sum = kl_sum = 0.0
        steps = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if idx.size < 2:
                continue
            result = backward_and_step(model, (x[idx], y[idx]), config, rng,
                                       optimizer=optimizer, beta=beta, kl_scale=kl_scale)
            nll_sum += result.terms.nll
            kl_sum += result.terms.kl_total
            steps += 1

        nll, kl = nll_sum / steps, kl_sum / steps
        if config.beta_max == 0:
            # baseline objective carries no KL term
            kl = 0.0
        kl_weight = beta * kl_scale
        record = TrainRecord(
            epoch=epoch, beta=beta, kl_weight=kl_weight, nll=nll, kl_total=kl,
            loss=nll + kl_weight * kl, per_layer_sigma_eff=model.sigma_effs(), steps=steps,
        )
        if eval_set is not None and model.task is Task.CLASSIFICATION:
            report = evaluate(model, eval_set[0], eval_set[1])
            record.eval_accuracy, record.eval_nll, record.eval_ece = report.accuracy, report.nll, report.ece

        log_manager.log_training('info', f"epoch {epoch}", beta=round(beta, 6), nll=nll, kl_total=kl,
                                 sigma_eff=record.per_layer_sigma_eff)
        logger.debug(f"epoch {epoch}: loss={record.loss:.6f} nll={nll:.6f} kl={kl:.3f}")
        records.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return records


def predict(model: Model, x: np.ndarray, mc_samples: int = 0,
            rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Class probabilities (classification) or mean predictions (regression)

    mc_samples = 0 is the deterministic eval pass; S >= 1 averages S noisy
    passes that use the running BN statistics.
    """
    if mc_samples < 0:
        raise DomainError(f"mc_samples must be >= 0, got {mc_samples}")
    x = np.asarray(x, dtype=float)
    classify = model.task is Task.CLASSIFICATION

    def one_pass(mode: ForwardMode, stream) -> np.ndarray:
        out, _ = model.forward(x, mode, rng=stream)
        return softmax(out) if classify else out

    if mc_samples == 0:
        return one_pass(EVALUATION, None)
    if rng is None:
        raise ConfigError("Monte Carlo prediction needs an explicit rng")
    total = one_pass(MC_PREDICTION, rng)
    for _ in range(mc_samples - 1):
        total = total + one_pass(MC_PREDICTION, rng)
    return total / mc_samples


def gradient_check(model: Model, batch: Batch, beta: float = 1.0, *, kl_scale: float = 1.0,
                   seed: int = 0, step: float = FD_STEP, rtol: float = FD_RTOL,
                   atol: float = FD_ATOL, names: Optional[Sequence[str]] = None) -> GradientCheckReport:
    """Central differences of the full loss against the analytic gradient

    Noise is drawn once and reused; running statistics are not touched.
    Each scalar entry of every trainable parameter counts as one check.
    """
    rng = make_rng(seed)
    noise = model.draw_noise(np.asarray(batch[0]).shape[0], rng)
    _, grads = loss_and_grads(model, batch, beta, kl_scale=kl_scale, mode=FROZEN_TRAINING, noise=noise)

    def loss_at() -> float:
        return objective(model, batch, beta, kl_scale=kl_scale, mode=FROZEN_TRAINING, noise=noise).loss

    checked = passed = 0
    worst = 0.0
    failures = []
    for param in model.parameters():
        if not param.trainable or (names is not None and param.name not in names):
            continue
        flat = param.value.reshape(-1)
        analytic = np.asarray(grads[param.name], dtype=float).reshape(-1)
        for k in range(flat.size):
            original = flat[k]
            flat[k] = original + step
            upper = loss_at()
            flat[k] = original - step
            lower = loss_at()
            flat[k] = original
            numeric = (upper - lower) / (2.0 * step)

            diff = abs(analytic[k] - numeric)
            scale = max(abs(analytic[k]), abs(numeric))
            rel = diff / scale if scale > 0 else 0.0
            checked += 1
            if diff <= atol or rel <= rtol:
                passed += 1
            else:
                worst = max(worst, rel)
                failures.append(f"{param.name}[{k}]")

    if failures:
        log_manager.log_numerics('warning', "gradient check mismatches", count=len(failures),
                                 worst=worst, first=failures[:5])
    return GradientCheckReport(checked, passed, worst, failures)
