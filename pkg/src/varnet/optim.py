"""
First-order optimizers with two learning-rate groups

Parameters in group "base" use lr_base, group "noise" (every rho and the
regression log-variance) uses lr_noise. State is keyed by parameter name so a
model can be rebuilt from a checkpoint without confusing slots.
"""

from enum import Enum
from typing import Dict, Iterable

import numpy as np

from src.utils.errors import ConfigError
from src.varnet.layers import Parameter


class OptimizerKind(str, Enum):
    ADAM = "adam"
    SGD = "sgd"


class Optimizer:

    def __init__(self, lr_base: float, lr_noise: float):
        if lr_base <= 0 or lr_noise <= 0:
            raise ConfigError(f"learning rates must be positive, got {lr_base}, {lr_noise}")
        self.lr = {"base": float(lr_base), "noise": float(lr_noise)}
        self.steps = 0

    def step(self, params: Iterable[Parameter], grads: Dict[str, np.ndarray]):
        self.steps += 1
        for param in params:
            if not param.trainable or param.name not in grads:
                continue
            update = self._update(param.name, np.asarray(grads[param.name], dtype=float), self.lr[param.group])
            param.value -= update

    def _update(self, name: str, grad: np.ndarray, lr: float) -> np.ndarray:
        raise NotImplementedError


class SGD(Optimizer):
    """Heavy-ball momentum SGD"""

    def __init__(self, lr_base: float, lr_noise: float, momentum: float = 0.9):
        super().__init__(lr_base, lr_noise)
        self.momentum = float(momentum)
        self.velocity: Dict[str, np.ndarray] = {}

    def _update(self, name, grad, lr):
        v = self.velocity.get(name)
        v = grad.copy() if v is None else self.momentum * v + grad
        self.velocity[name] = v
        return lr * v


class Adam(Optimizer):

    def __init__(self, lr_base: float, lr_noise: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(lr_base, lr_noise)
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def _update(self, name, grad, lr):
        m = self.m.get(name, np.zeros_like(grad))
        v = self.v.get(name, np.zeros_like(grad))
        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        self.m[name], self.v[name] = m, v
        m_hat = m / (1.0 - self.beta1 ** self.steps)
        v_hat = v / (1.0 - self.beta2 ** self.steps)
        return lr * m_hat / (np.sqrt(v_hat) + self.eps)


def build_optimizer(kind: OptimizerKind, lr_base: float, lr_noise: float) -> Optimizer:
    kind = OptimizerKind(kind)
    if kind is OptimizerKind.SGD:
        return SGD(lr_base, lr_noise)
    return Adam(lr_base, lr_noise)
