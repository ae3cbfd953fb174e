"""
Models built from the variational unit

NoisyMLP             hidden blocks linear -> BN -> noise -> ReLU, plain linear head
DirectionalRegressor y = mu^T x + sigma_eff * eps with a unit-norm direction mu (no BN)

Both expose the same surface to the training loop: parameters(), noise_params(),
draw_noise(), forward(), backward(), renormalize().
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.sphere.klvar import Parameterization
from src.utils.errors import DomainError
from src.varnet.layers import (
    DEFAULT_BN_EPSILON,
    DEFAULT_BN_MOMENTUM,
    DEFAULT_SIGMA_EFF,
    EffNoiseParam,
    LayerCache,
    Mode,
    NoisyNormLayer,
    Parameter,
    unit_rows,
)

LOG_2PI = math.log(2.0 * math.pi)


class Task(str, Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


@dataclass(frozen=True)
class ForwardMode:
    """Which statistics BN uses, whether noise is added, whether running stats move"""
    batch_stats: bool
    noise_on: bool
    update_stats: bool = False


TRAINING = ForwardMode(batch_stats=True, noise_on=True, update_stats=True)
FROZEN_TRAINING = ForwardMode(batch_stats=True, noise_on=True)
EVALUATION = ForwardMode(batch_stats=False, noise_on=False)
MC_PREDICTION = ForwardMode(batch_stats=False, noise_on=True)
PROBE = ForwardMode(batch_stats=True, noise_on=False)


class MlpCache(NamedTuple):
    layers: List[LayerCache]
    pre_relu: List[np.ndarray]
    hidden: np.ndarray


class NoisyMLP:
    """Feed-forward classifier or regressor with variational hidden blocks"""

    def __init__(self, layers: Sequence[NoisyNormLayer], head_weights: np.ndarray,
                 head_bias: np.ndarray, task: Task = Task.CLASSIFICATION, log_var: float = 0.0):
        self.layers = list(layers)
        self.head_weights = np.array(head_weights, dtype=float)
        self.head_bias = np.array(head_bias, dtype=float)
        self.task = Task(task)
        self.log_var = np.array(float(log_var))
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DomainError(f"layer widths do not chain: {prev.out_dim} -> {nxt.in_dim}")
        last = self.layers[-1].out_dim if self.layers else None
        if last is not None and self.head_weights.shape[1] != last:
            raise DomainError("head does not match the last hidden width")

    @classmethod
    def build(cls, in_dim: int, hidden: Sequence[int], out_dim: int, rng: np.random.Generator,
              task: Task = Task.CLASSIFICATION,
              init_sigma_eff: float = DEFAULT_SIGMA_EFF,
              bn_momentum: float = DEFAULT_BN_MOMENTUM,
              bn_epsilon: float = DEFAULT_BN_EPSILON,
              parameterization: Parameterization = Parameterization.SOFTPLUS,
              freeze_noise: bool = False) -> "NoisyMLP":
        if not hidden:
            raise DomainError("at least one hidden layer is required")
        layers = []
        width = in_dim
        for units in hidden:
            layers.append(NoisyNormLayer.initialize(
                width, units, rng, init_sigma_eff, bn_momentum, bn_epsilon, parameterization, freeze_noise
            ))
            width = units
        # He-style init for the head; hidden activations are ReLU of unit-variance inputs
        head = rng.standard_normal((out_dim, width)) * math.sqrt(2.0 / width)
        return cls(layers, head, np.zeros(out_dim), task)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.head_weights.shape[0]

    def set_mode(self, mode: Mode):
        for layer in self.layers:
            layer.mode = Mode(mode)

    def noise_params(self) -> List[EffNoiseParam]:
        return [layer.noise for layer in self.layers]

    def named_noise_params(self) -> List[Tuple[str, EffNoiseParam]]:
        return [(f"layers.{i}.rho", layer.noise) for i, layer in enumerate(self.layers)]

    def sigma_effs(self) -> List[float]:
        return [p.sigma_eff for p in self.noise_params()]

    def parameters(self) -> List[Parameter]:
        params = []
        for i, layer in enumerate(self.layers):
            params.append(Parameter(f"layers.{i}.weights", layer.weights, "base"))
            params.append(Parameter(f"layers.{i}.rho", layer.noise.rho, "noise", not layer.noise.frozen))
        params.append(Parameter("head.weights", self.head_weights, "base"))
        params.append(Parameter("head.bias", self.head_bias, "base"))
        if self.task is Task.REGRESSION:
            params.append(Parameter("log_var", self.log_var, "noise"))
        return params

    def draw_noise(self, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
        return [layer.draw_noise(batch_size, rng) for layer in self.layers]

    def forward(self, x: np.ndarray, mode: ForwardMode, rng: Optional[np.random.Generator] = None,
                noise: Optional[List[np.ndarray]] = None) -> Tuple[np.ndarray, MlpCache]:
        """Logits (classification) or predictions (regression, shape (n,))"""
        h = np.asarray(x, dtype=float)
        caches, pre_relu = [], []
        for i, layer in enumerate(self.layers):
            y, cache = layer.forward(
                h, batch_stats=mode.batch_stats, noise_on=mode.noise_on, rng=rng,
                noise=None if noise is None else noise[i], update_stats=mode.update_stats,
            )
            caches.append(cache)
            pre_relu.append(y)
            h = np.maximum(y, 0.0)
        out = h @ self.head_weights.T + self.head_bias
        if self.task is Task.REGRESSION:
            out = out[:, 0]
        return out, MlpCache(caches, pre_relu, h)

    def backward(self, grad_out: np.ndarray, cache: MlpCache) -> Dict[str, np.ndarray]:
        """Data-term gradients for every parameter given dL/d(outputs)"""
        if self.task is Task.REGRESSION:
            grad_out = grad_out[:, None]
        grads = {
            "head.weights": grad_out.T @ cache.hidden,
            "head.bias": grad_out.sum(axis=0),
        }
        grad_h = grad_out @ self.head_weights
        for i in reversed(range(len(self.layers))):
            grad_y = grad_h * (cache.pre_relu[i] > 0.0)
            grad_h, grad_w, grad_rho = self.layers[i].backward(grad_y, cache.layers[i])
            grads[f"layers.{i}.weights"] = grad_w
            grads[f"layers.{i}.rho"] = np.array(grad_rho)
        return grads

    def renormalize(self):
        for layer in self.layers:
            layer.renormalize()


class RegressorCache(NamedTuple):
    x: np.ndarray
    unit_direction: np.ndarray
    norm: float
    noise: Optional[np.ndarray]


class DirectionalRegressor:
    """Single-direction student for the linear teacher study"""

    task = Task.REGRESSION

    def __init__(self, direction: np.ndarray, noise: EffNoiseParam, log_var: float = 0.0):
        self.direction = np.array(direction, dtype=float).reshape(-1)
        if noise.dim != self.direction.size or noise.multiplicity != 1:
            raise DomainError("noise parameter must have M = 1 and D = len(direction)")
        self.noise = noise
        self.log_var = np.array(float(log_var))

    @classmethod
    def initialize(cls, dim: int, rng: np.random.Generator,
                   init_sigma_eff: float = DEFAULT_SIGMA_EFF,
                   parameterization: Parameterization = Parameterization.SOFTPLUS,
                   freeze_noise: bool = False) -> "DirectionalRegressor":
        direction, _ = unit_rows(rng.standard_normal((1, dim)))
        noise = EffNoiseParam.from_sigma(init_sigma_eff, 1, dim, parameterization, freeze_noise)
        return cls(direction[0], noise)

    @property
    def in_dim(self) -> int:
        return self.direction.size

    def unit_direction(self) -> np.ndarray:
        return unit_rows(self.direction[None, :])[0][0]

    def noise_params(self) -> List[EffNoiseParam]:
        return [self.noise]

    def named_noise_params(self) -> List[Tuple[str, EffNoiseParam]]:
        return [("noise.rho", self.noise)]

    def sigma_effs(self) -> List[float]:
        return [self.noise.sigma_eff]

    def parameters(self) -> List[Parameter]:
        return [
            Parameter("direction", self.direction, "base"),
            Parameter("noise.rho", self.noise.rho, "noise", not self.noise.frozen),
            Parameter("log_var", self.log_var, "noise"),
        ]

    def draw_noise(self, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
        return [rng.standard_normal(batch_size)]

    def forward(self, x: np.ndarray, mode: ForwardMode, rng: Optional[np.random.Generator] = None,
                noise: Optional[List[np.ndarray]] = None) -> Tuple[np.ndarray, RegressorCache]:
        x = np.asarray(x, dtype=float)
        unit, norms = unit_rows(self.direction[None, :])
        pred = x @ unit[0]
        eps = None
        if mode.noise_on:
            if noise is None:
                if rng is None:
                    raise DomainError("noisy forward pass needs a random stream or pre-drawn noise")
                noise = self.draw_noise(x.shape[0], rng)
            eps = noise[0]
            pred = pred + self.noise.sigma_eff * eps
        return pred, RegressorCache(x, unit[0], float(norms[0, 0]), eps)

    def backward(self, grad_out: np.ndarray, cache: RegressorCache) -> Dict[str, np.ndarray]:
        grad_unit = grad_out @ cache.x
        grad_dir = (grad_unit - (grad_unit @ cache.unit_direction) * cache.unit_direction) / cache.norm
        grad_rho = 0.0
        if cache.noise is not None:
            grad_rho = float(grad_out @ cache.noise) * self.noise.dsigma_drho
        return {"direction": grad_dir, "noise.rho": np.array(grad_rho)}

    def renormalize(self):
        self.direction[:] = self.unit_direction()

    def expected_nll(self, x: np.ndarray, y: np.ndarray) -> float:
        """NLL averaged over the injected noise in closed form"""
        residual = y - np.asarray(x, dtype=float) @ self.unit_direction()
        var = float(np.exp(self.log_var))
        spread = float(np.mean(residual ** 2)) + self.noise.sigma_eff ** 2
        return 0.5 * (LOG_2PI + float(self.log_var) + spread / var)
