"""
Variational unit: unit-norm linear map -> batch norm (no affine) -> sigma_eff noise

    u = W~ x,  W~ = W / |W| row-wise
    y = BN(u) + sigma_eff * eps,  eps ~ N(0, 1) per (example, unit)

Rows are divided by their norm inside the forward pass as well as renormalized
after every optimizer step, so rescaling a row never changes the layer output.
"""

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional, Tuple

import numpy as np

from src.sphere.klvar import (
    EffNoiseSpec,
    Parameterization,
    dsigma_drho,
    kl_approx,
    kl_approx_grad,
    rho_from_sigma,
    sigma_from_rho,
)
from src.utils.errors import DomainError

DEFAULT_BN_MOMENTUM = 0.1
DEFAULT_BN_EPSILON = 1e-5
DEFAULT_SIGMA_EFF = 0.1
ROW_NORM_FLOOR = 1e-12


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass
class Parameter:
    """Live reference to a trainable array and its learning-rate group"""
    name: str
    value: np.ndarray
    group: str = "base"
    trainable: bool = True


class EffNoiseParam:
    """Shared noise scale of one layer, sigma_eff = softplus(rho) (or exp(rho))"""

    def __init__(self, rho: float, multiplicity: int, dim: int,
                 parameterization: Parameterization = Parameterization.SOFTPLUS,
                 frozen: bool = False):
        if int(multiplicity) < 1:
            raise DomainError(f"multiplicity must be >= 1, got {multiplicity}")
        self.rho = np.array(float(rho))
        self.multiplicity = int(multiplicity)
        self.dim = int(dim)
        self.parameterization = Parameterization(parameterization)
        self.frozen = bool(frozen)

    @classmethod
    def from_sigma(cls, sigma_eff: float, multiplicity: int, dim: int,
                   parameterization: Parameterization = Parameterization.SOFTPLUS,
                   frozen: bool = False) -> "EffNoiseParam":
        return cls(rho_from_sigma(sigma_eff, parameterization), multiplicity, dim, parameterization, frozen)

    @property
    def sigma_eff(self) -> float:
        return sigma_from_rho(float(self.rho), self.parameterization)

    @property
    def dsigma_drho(self) -> float:
        return dsigma_drho(float(self.rho), self.parameterization)

    def spec(self) -> EffNoiseSpec:
        return EffNoiseSpec(self.sigma_eff, self.dim)

    def kl(self) -> float:
        """M * KL_approx(sigma_eff, D)"""
        return self.multiplicity * kl_approx(self.spec())

    def kl_grad_rho(self) -> float:
        """d kl() / d rho"""
        return self.multiplicity * kl_approx_grad(self.spec()) * self.dsigma_drho


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = DEFAULT_BN_MOMENTUM
    epsilon: float = DEFAULT_BN_EPSILON

    @classmethod
    def initial(cls, units: int, momentum: float = DEFAULT_BN_MOMENTUM,
                epsilon: float = DEFAULT_BN_EPSILON) -> "BatchNormState":
        return cls(np.zeros(units), np.ones(units), float(momentum), float(epsilon))

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray, batch_size: int):
        # running variance tracks the unbiased estimate
        unbiased = batch_var * batch_size / max(batch_size - 1, 1)
        self.running_mean *= 1.0 - self.momentum
        self.running_mean += self.momentum * batch_mean
        self.running_var *= 1.0 - self.momentum
        self.running_var += self.momentum * unbiased


class BatchNormCache(NamedTuple):
    normalized: np.ndarray
    inv_std: np.ndarray
    batch_stats: bool


def _batchnorm(u: np.ndarray, state: BatchNormState, batch_stats: bool,
               update_stats: bool) -> BatchNormCache:
    if batch_stats:
        if u.shape[0] < 2:
            raise DomainError(f"batch statistics need at least 2 examples, got {u.shape[0]}")
        mean = u.mean(axis=0)
        var = u.var(axis=0)
        if update_stats:
            state.update(mean, var, u.shape[0])
    else:
        mean, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    return BatchNormCache((u - mean) * inv_std, inv_std, batch_stats)


def batchnorm_forward(u, state: BatchNormState, mode: Mode = Mode.TRAIN,
                      update_stats: bool = True) -> np.ndarray:
    """Standardize each unit (column) by batch statistics (train) or running statistics (eval)

    A 1-d input is treated as one unit.
    """
    u = np.asarray(u, dtype=float)
    column = u.ndim == 1
    batch = u.reshape(-1, 1) if column else u
    out = _batchnorm(batch, state, Mode(mode) is Mode.TRAIN, update_stats).normalized
    return out.reshape(-1) if column else out


def batchnorm_backward(grad_out: np.ndarray, cache: BatchNormCache) -> np.ndarray:
    """Gradient through the standardization, including the batch mean and variance"""
    if not cache.batch_stats:
        return grad_out * cache.inv_std
    g_mean = grad_out.mean(axis=0)
    gx_mean = (grad_out * cache.normalized).mean(axis=0)
    return cache.inv_std * (grad_out - g_mean - cache.normalized * gx_mean)


def unit_rows(weights: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(weights, axis=1, keepdims=True)
    norms = np.maximum(norms, ROW_NORM_FLOOR)
    return weights / norms, norms


class LayerCache(NamedTuple):
    x: np.ndarray
    unit_weights: np.ndarray
    norms: np.ndarray
    bn: BatchNormCache
    noise: Optional[np.ndarray]


class NoisyNormLayer:
    """Dense variational block without the activation"""

    def __init__(self, weights: np.ndarray, noise: EffNoiseParam, bn_state: BatchNormState):
        weights = np.array(weights, dtype=float)
        if weights.ndim != 2:
            raise DomainError(f"weights must be a matrix, got shape {weights.shape}")
        if noise.dim != weights.shape[1] or noise.multiplicity != weights.shape[0]:
            raise DomainError("noise parameter does not match the weight shape")
        self.weights = weights
        self.noise = noise
        self.bn_state = bn_state
        self.mode = Mode.TRAIN

    @classmethod
    def initialize(cls, in_dim: int, out_dim: int, rng: np.random.Generator,
                   init_sigma_eff: float = DEFAULT_SIGMA_EFF,
                   bn_momentum: float = DEFAULT_BN_MOMENTUM,
                   bn_epsilon: float = DEFAULT_BN_EPSILON,
                   parameterization: Parameterization = Parameterization.SOFTPLUS,
                   freeze_noise: bool = False) -> "NoisyNormLayer":
        weights, _ = unit_rows(rng.standard_normal((out_dim, in_dim)))
        noise = EffNoiseParam.from_sigma(init_sigma_eff, out_dim, in_dim, parameterization, freeze_noise)
        return cls(weights, noise, BatchNormState.initial(out_dim, bn_momentum, bn_epsilon))

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def draw_noise(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((batch_size, self.out_dim))

    def forward(self, x: np.ndarray, *, batch_stats: bool, noise_on: bool,
                rng: Optional[np.random.Generator] = None,
                noise: Optional[np.ndarray] = None,
                update_stats: bool = False) -> Tuple[np.ndarray, LayerCache]:
        """BN(W~ x) plus sigma_eff * eps when noise_on.

        eps is taken from `noise` when given, otherwise drawn from rng.
        """
        unit, norms = unit_rows(self.weights)
        u = x @ unit.T
        bn = _batchnorm(u, self.bn_state, batch_stats, update_stats)
        y = bn.normalized
        eps = None
        if noise_on:
            if noise is None:
                if rng is None:
                    raise DomainError("noisy forward pass needs a random stream or pre-drawn noise")
                noise = self.draw_noise(x.shape[0], rng)
            eps = noise
            y = y + self.noise.sigma_eff * eps
        return y, LayerCache(x, unit, norms, bn, eps)

    def backward(self, grad_y: np.ndarray, cache: LayerCache) -> Tuple[np.ndarray, np.ndarray, float]:
        """Returns (grad_x, grad_weights, grad_rho) for the data term"""
        grad_rho = 0.0
        if cache.noise is not None:
            grad_rho = float(np.sum(grad_y * cache.noise)) * self.noise.dsigma_drho
        grad_u = batchnorm_backward(grad_y, cache.bn)
        grad_unit = grad_u.T @ cache.x
        grad_x = grad_u @ cache.unit_weights
        # through W~ = W / |W|: drop the radial component, rescale by 1/|W|
        radial = np.sum(grad_unit * cache.unit_weights, axis=1, keepdims=True)
        grad_weights = (grad_unit - radial * cache.unit_weights) / cache.norms
        return grad_x, grad_weights, grad_rho

    def renormalize(self):
        self.weights[:] = unit_rows(self.weights)[0]

    def max_row_norm_error(self) -> float:
        return float(np.max(np.abs(np.linalg.norm(self.weights, axis=1) - 1.0)))


def noisy_layer_forward(layer: NoisyNormLayer, x: np.ndarray,
                        rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Forward in the layer's own mode: train adds fresh noise and updates running
    statistics, eval is the deterministic BN(u)"""
    x = np.asarray(x, dtype=float)
    train = layer.mode is Mode.TRAIN
    y, _ = layer.forward(x, batch_stats=train, noise_on=train, rng=rng, update_stats=train)
    return y
