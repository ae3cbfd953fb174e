"""
Loss-landscape probe around one trained layer

The layer's weight matrix is flattened to w, w_hat = w / |w|, and replaced by

    1D: w' = y * w_hat + x * r_hat                      (x, y) grid
    2D: w' = w_hat + a * r1_hat + b * r2_hat            (a, b) grid

with every basis direction orthogonal to w_hat (and r1 orthogonal to r2).
The loss is evaluated on a fixed batch with batch statistics and no noise.
The analytic surface is kappa * (1 - cos theta), theta the angle between w'
and w_hat.
"""

import logging
import math
from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from src.sphere.klvar import EffNoiseSpec, kappa_from_sigma_eff
from src.utils.errors import ConfigError, ConsistencyError, DomainError
from src.utils.log_manager import log_manager
from src.utils.metrics import pearson
from src.utils.rng import substream
from src.varnet.model import PROBE, NoisyMLP
from src.varnet.training import objective

logger = logging.getLogger(__name__)

ORTHOGONALITY_TOL = 1e-8
CENTRE_REL_TOL = 1e-9
BASIS_STREAM = 0
BATCH_STREAM = 1


class LandscapeMode(str, Enum):
    ONE_D = "1d"
    TWO_D = "2d"


class Axis(NamedTuple):
    name: str
    lo: float
    hi: float
    steps: int

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.steps)


@dataclass(frozen=True)
class LandscapeConfig:
    mode: LandscapeMode = LandscapeMode.TWO_D
    steps: int = 51
    layer_id: int = 0
    x_range: Tuple[float, float] = (-1.5, 1.5)
    y_range: Tuple[float, float] = (0.0, 1.5)
    ab_range: Tuple[float, float] = (-1.5, 1.5)
    kappa: Optional[float] = None
    batch_size: int = 512
    seed: int = 0

    def validate(self) -> "LandscapeConfig":
        try:
            LandscapeMode(self.mode)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.steps < 2:
            raise ConfigError(f"steps must be >= 2, got {self.steps}")
        for name in ("x_range", "y_range", "ab_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"{name} must be increasing, got {lo}, {hi}")
        if self.kappa is not None and self.kappa < 0:
            raise ConfigError(f"kappa must be >= 0, got {self.kappa}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.layer_id < 0 or self.seed < 0:
            raise ConfigError("layer_id and seed must be >= 0")
        return self

    def axes(self) -> Tuple[Axis, Axis]:
        if LandscapeMode(self.mode) is LandscapeMode.ONE_D:
            return Axis("x", *self.x_range, self.steps), Axis("y", *self.y_range, self.steps)
        return Axis("a", *self.ab_range, self.steps), Axis("b", *self.ab_range, self.steps)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["mode"] = LandscapeMode(self.mode).value
        data["x_range"], data["y_range"], data["ab_range"] = (
            list(self.x_range), list(self.y_range), list(self.ab_range))
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "LandscapeConfig":
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"unknown landscape config keys: {', '.join(unknown)}")
        values = dict(data)
        for name in ("x_range", "y_range", "ab_range"):
            if name in values:
                values[name] = tuple(float(v) for v in values[name])
        try:
            if "mode" in values:
                values["mode"] = LandscapeMode(values["mode"])
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return cls(**values).validate()


@dataclass
class LandscapeGrid:
    """losses[i, j] is the value at (axis_a[i], axis_b[j])"""
    mode: LandscapeMode
    axis_a: Axis
    axis_b: Axis
    basis: List[np.ndarray]
    layer_id: int
    losses: np.ndarray

    def rows(self) -> List[Dict]:
        a_values, b_values = self.axis_a.values(), self.axis_b.values()
        return [
            {self.axis_a.name: float(a), self.axis_b.name: float(b), "loss": float(self.losses[i, j])}
            for i, a in enumerate(a_values)
            for j, b in enumerate(b_values)
        ]

    def centre(self) -> Tuple[float, float]:
        return (0.0, 1.0) if self.mode is LandscapeMode.ONE_D else (0.0, 0.0)

    def minimum(self, tol: float = 1e-9) -> Tuple[float, float]:
        """Coordinates of the lowest loss; ties within tol go to the point nearest the centre

        Along the ray x = 0 of a 1D grid the loss is constant (rows are
        renormalized), so the tie rule picks the centre of that ray.
        """
        a_values, b_values = self.axis_a.values(), self.axis_b.values()
        lowest = float(np.nanmin(self.losses))
        ca, cb = self.centre()
        best, best_dist = None, math.inf
        for i, j in zip(*np.nonzero(self.losses <= lowest + tol * max(1.0, abs(lowest)))):
            dist = math.hypot(a_values[i] - ca, b_values[j] - cb)
            if dist < best_dist:
                best, best_dist = (float(a_values[i]), float(b_values[j])), dist
        return best


class LandscapeResult(NamedTuple):
    empirical: LandscapeGrid
    analytic: LandscapeGrid
    kappa: float
    centre_loss: float


def tangent_basis(w_hat: np.ndarray, count: int, rng: np.random.Generator) -> List[np.ndarray]:
    """`count` orthonormal directions orthogonal to w_hat (Gram-Schmidt, two passes)"""
    basis: List[np.ndarray] = []
    for _ in range(count):
        r = rng.standard_normal(w_hat.size)
        for _ in range(2):
            for q in [w_hat] + basis:
                r -= (r @ q) * q
        norm = np.linalg.norm(r)
        if norm == 0.0:
            raise DomainError("degenerate perturbation direction")
        basis.append(r / norm)
    for i, r in enumerate(basis):
        if abs(r @ w_hat) > ORTHOGONALITY_TOL:
            raise ConsistencyError("perturbation direction not orthogonal to the trained direction")
        for q in basis[:i]:
            if abs(r @ q) > ORTHOGONALITY_TOL:
                raise ConsistencyError("perturbation directions not mutually orthogonal")
    return basis


def perturbed(mode: LandscapeMode, w_hat: np.ndarray, basis: List[np.ndarray], a: float, b: float) -> np.ndarray:
    if mode is LandscapeMode.ONE_D:
        return b * w_hat + a * basis[0]
    return w_hat + a * basis[0] + b * basis[1]


def cos_angle(vector: np.ndarray, w_hat: np.ndarray) -> float:
    """cos of the angle to w_hat; a zero vector has no direction and counts as orthogonal"""
    norm = np.linalg.norm(vector)
    if norm == 0.0:
        return 0.0
    return float(np.clip(vector @ w_hat / norm, -1.0, 1.0))


def analytic_grid(mode: LandscapeMode, axes: Tuple[Axis, Axis], kappa: float, layer_id: int,
                  basis: List[np.ndarray]) -> LandscapeGrid:
    axis_a, axis_b = axes
    losses = np.empty((axis_a.steps, axis_b.steps))
    for i, a in enumerate(axis_a.values()):
        for j, b in enumerate(axis_b.values()):
            if mode is LandscapeMode.ONE_D:
                norm = math.hypot(a, b)
                cos = b / norm if norm > 0 else 0.0
            else:
                cos = 1.0 / math.sqrt(1.0 + a * a + b * b)
            losses[i, j] = kappa * (1.0 - cos)
    return LandscapeGrid(mode, axis_a, axis_b, basis, layer_id, losses)


def landscape_probe(model: NoisyMLP, x: np.ndarray, y: np.ndarray, config: LandscapeConfig) -> LandscapeResult:
    """Empirical and analytic grids on identical axes"""
    config.validate()
    mode = LandscapeMode(config.mode)
    if not 0 <= config.layer_id < len(model.layers):
        raise DomainError(f"model has no layer {config.layer_id}")
    layer = model.layers[config.layer_id]
    batch = (np.asarray(x, dtype=float), np.asarray(y))

    original = layer.weights.copy()
    w = original.reshape(-1)
    w_hat = w / np.linalg.norm(w)
    basis = tangent_basis(w_hat, 1 if mode is LandscapeMode.ONE_D else 2, substream(config.seed, BASIS_STREAM))

    def loss_at(vector: np.ndarray) -> float:
        layer.weights[:] = vector.reshape(original.shape)
        return objective(model, batch, 0.0, mode=PROBE).nll

    axes = config.axes()
    losses = np.empty((axes[0].steps, axes[1].steps))
    try:
        reference = loss_at(w)
        centre = loss_at(perturbed(mode, w_hat, basis, 0.0, 1.0 if mode is LandscapeMode.ONE_D else 0.0))
        if abs(centre - reference) > CENTRE_REL_TOL * max(1.0, abs(reference)):
            raise ConsistencyError(f"centre loss {centre!r} differs from the unperturbed loss {reference!r}")
        for i, a in enumerate(axes[0].values()):
            for j, b in enumerate(axes[1].values()):
                losses[i, j] = loss_at(perturbed(mode, w_hat, basis, a, b))
    finally:
        layer.weights[:] = original

    kappa = config.kappa
    if kappa is None:
        kappa = kappa_from_sigma_eff(EffNoiseSpec(layer.noise.sigma_eff, layer.in_dim))
    empirical = LandscapeGrid(mode, axes[0], axes[1], basis, config.layer_id, losses)
    analytic = analytic_grid(mode, axes, kappa, config.layer_id, basis)
    log_manager.log_experiment('info', "landscape probe finished", mode=mode.value,
                               steps=config.steps, layer=config.layer_id, kappa=kappa)
    return LandscapeResult(empirical, analytic, float(kappa), reference)


def fitted_scale(empirical: LandscapeGrid, analytic: LandscapeGrid, centre_loss: float) -> float:
    """Least-squares constant c with (loss - centre_loss) ~ c * analytic"""
    target = (empirical.losses - centre_loss).reshape(-1)
    model = analytic.losses.reshape(-1)
    denom = float(model @ model)
    return float(target @ model / denom) if denom > 0 else 0.0


def landscape_correlation(result: LandscapeResult) -> float:
    """Pearson correlation of the empirical surface with the scale-fitted analytic one"""
    scaled = fitted_scale(result.empirical, result.analytic, result.centre_loss) * result.analytic.losses
    return pearson(result.empirical.losses, scaled)
