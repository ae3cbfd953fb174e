"""
Student-teacher recovery sweeps

A single-direction student (unit-norm mu, shared noise scale, learned
observation variance) is fit to data from a unit-norm linear teacher by
full-batch Adam on the reparameterized regression NLL plus beta * KL / N.
Each (grid value, repeat) cell has its own seeded substream, so cells can run
in any order or in worker processes.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.utils.errors import ConfigError, NumericalError
from src.utils.log_manager import log_manager
from src.utils.metrics import cosine_similarity, inferred_mean_resultant, spearman
from src.utils.rng import substream
from src.experiments.datasets import linear_teacher
from src.varnet.model import DirectionalRegressor
from src.varnet.optim import OptimizerKind, build_optimizer
from src.varnet.training import TrainConfig, backward_and_step, kl_total

logger = logging.getLogger(__name__)

STUDENT_STREAM = 3
FINAL_WINDOW_REL_TOL = 1e-3
TREND_MIN_CORRELATION = 0.8


class SweepVariable(str, Enum):
    OBS_NOISE = "obs_noise"
    DIM = "dim"
    N_SAMPLES = "n_samples"


# sign of the expected relation between the swept variable and sigma_eff
EXPECTED_TREND = {
    SweepVariable.OBS_NOISE: 1,
    SweepVariable.DIM: 1,
    SweepVariable.N_SAMPLES: -1,
}

DEFAULT_GRIDS = {
    SweepVariable.OBS_NOISE: [0.05, 0.1, 0.2, 0.4, 0.8],
    SweepVariable.DIM: [20, 50, 100, 200],
    SweepVariable.N_SAMPLES: [100, 300, 1000, 3000],
}

DEFAULT_BASES = {
    SweepVariable.OBS_NOISE: {"obs_noise": 0.1, "dim": 100, "n_samples": 1000},
    SweepVariable.DIM: {"obs_noise": 0.1, "dim": 100, "n_samples": 1000},
    SweepVariable.N_SAMPLES: {"obs_noise": 0.1, "dim": 50, "n_samples": 1000},
}


@dataclass(frozen=True)
class SweepSpec:
    variable: SweepVariable = SweepVariable.OBS_NOISE
    grid: Tuple[float, ...] = ()
    repeats: int = 5
    base: Dict[str, float] = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def default(cls, variable: SweepVariable, repeats: int = 5, seed: int = 0) -> "SweepSpec":
        variable = SweepVariable(variable)
        return cls(variable, tuple(DEFAULT_GRIDS[variable]), repeats, dict(DEFAULT_BASES[variable]), seed).validate()

    def validate(self) -> "SweepSpec":
        try:
            SweepVariable(self.variable)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if not self.grid:
            raise ConfigError("sweep grid must be nonempty")
        if list(self.grid) != sorted(self.grid):
            raise ConfigError("sweep grid must be sorted")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        unknown = sorted(set(self.base) - {v.value for v in SweepVariable})
        if unknown:
            raise ConfigError(f"unknown sweep base keys: {', '.join(unknown)}")
        for value in self.grid:
            cell = self.cell_values(value)
            if cell["dim"] < 2 or cell["n_samples"] < 2 or cell["obs_noise"] < 0:
                raise ConfigError(f"invalid sweep cell {cell}")
        return self

    def cell_values(self, value: float) -> Dict[str, float]:
        variable = SweepVariable(self.variable)
        cell = dict(DEFAULT_BASES[variable])
        cell.update(self.base)
        cell[variable.value] = value
        cell["dim"] = int(cell["dim"])
        cell["n_samples"] = int(cell["n_samples"])
        cell["obs_noise"] = float(cell["obs_noise"])
        return cell

    def to_dict(self) -> dict:
        data = asdict(self)
        data["variable"] = SweepVariable(self.variable).value
        data["grid"] = list(self.grid)
        return data


@dataclass(frozen=True)
class StudentConfig:
    steps: int = 2000
    lr_base: float = 1e-3
    lr_noise: float = 1e-2
    beta: float = 1.0
    patience: int = 200
    tolerance: float = 1e-6
    init_sigma_eff: float = 0.1
    optimizer: OptimizerKind = OptimizerKind.ADAM
    grad_norm_cap: float = 1e6

    def validate(self) -> "StudentConfig":
        if self.steps < 1 or self.patience < 1:
            raise ConfigError("steps and patience must be >= 1")
        if self.lr_base <= 0 or self.lr_noise <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.tolerance < 0:
            raise ConfigError(f"tolerance must be >= 0, got {self.tolerance}")
        if self.init_sigma_eff <= 0:
            raise ConfigError(f"init_sigma_eff must be positive, got {self.init_sigma_eff}")
        try:
            OptimizerKind(self.optimizer)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return self

    def train_config(self, n_samples: int) -> TrainConfig:
        return TrainConfig(
            beta_max=self.beta, warmup_epochs=0, epochs=self.steps, batch_size=max(n_samples, 2),
            lr_base=self.lr_base, lr_noise=self.lr_noise, optimizer=self.optimizer,
            dataset_size=n_samples, grad_norm_cap=self.grad_norm_cap, init_sigma_eff=self.init_sigma_eff,
        )

    def to_dict(self) -> dict:
        data = asdict(self)
        data["optimizer"] = OptimizerKind(self.optimizer).value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "StudentConfig":
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"unknown student config keys: {', '.join(unknown)}")
        values = dict(data)
        try:
            if "optimizer" in values:
                values["optimizer"] = OptimizerKind(values["optimizer"])
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return cls(**values).validate()


@dataclass
class FitResult:
    sigma_eff: float
    cosine: float
    inferred_a: float
    final_nll: float
    steps: int
    converged: bool


def fit_student(x: np.ndarray, y: np.ndarray, teacher: np.ndarray, config: StudentConfig,
                rng: np.random.Generator) -> FitResult:
    """Full-batch fit; stops early once the closed-form objective plateaus"""
    n, D = x.shape
    model = DirectionalRegressor.initialize(D, rng, config.init_sigma_eff)
    train_cfg = config.train_config(n)
    optimizer = build_optimizer(config.optimizer, config.lr_base, config.lr_noise)
    kl_scale = 1.0 / n

    def tracked() -> float:
        return model.expected_nll(x, y) + config.beta * kl_scale * kl_total(model)

    history = [tracked()]
    best = history[0]
    since_best = 0
    converged = False
    steps = 0
    try:
        for steps in range(1, config.steps + 1):
            backward_and_step(model, (x, y), train_cfg, rng, optimizer=optimizer,
                              beta=config.beta, kl_scale=kl_scale)
            value = tracked()
            if not math.isfinite(value):
                raise NumericalError(f"objective became {value}")
            history.append(value)
            if value < best - config.tolerance:
                best, since_best = value, 0
            else:
                since_best += 1
            if since_best >= config.patience:
                converged = True
                break
        if not converged:
            old = history[max(0, len(history) - 1 - config.patience)]
            converged = (old - history[-1]) <= FINAL_WINDOW_REL_TOL * max(abs(old), 1e-12)
    except NumericalError as e:
        log_manager.log_numerics('warning', "student fit failed", error=str(e), dim=D, n_samples=n)
        nan = float("nan")
        return FitResult(nan, nan, nan, nan, steps, False)

    sigma = model.noise.sigma_eff
    return FitResult(
        sigma_eff=sigma,
        cosine=cosine_similarity(model.unit_direction(), teacher),
        inferred_a=inferred_mean_resultant(sigma, D),
        final_nll=model.expected_nll(x, y),
        steps=steps,
        converged=bool(converged),
    )


def run_cell(spec: SweepSpec, config: StudentConfig, cell: int, repeat: int) -> Dict:
    values = spec.cell_values(spec.grid[cell])
    data = linear_teacher(values["dim"], values["n_samples"], values["obs_noise"], spec.seed, cell, repeat)
    result = fit_student(data.x, data.y, data.teacher, config, substream(spec.seed, cell, repeat, STUDENT_STREAM))
    row = {
        "variable": SweepVariable(spec.variable).value,
        "value": spec.grid[cell],
        "cell": cell,
        "repeat": repeat,
        "obs_noise": values["obs_noise"],
        "dim": values["dim"],
        "n_samples": values["n_samples"],
    }
    row.update(asdict(result))
    return row


def _run_cell_args(args) -> Dict:
    return run_cell(*args)


def student_teacher(spec: SweepSpec, config: Optional[StudentConfig] = None, workers: int = 1) -> List[Dict]:
    """One row per (cell, repeat), sorted by cell then repeat"""
    spec.validate()
    config = (config or StudentConfig()).validate()
    jobs = [(spec, config, cell, repeat) for cell in range(len(spec.grid)) for repeat in range(spec.repeats)]
    log_manager.log_experiment('info', "student-teacher sweep started",
                               variable=SweepVariable(spec.variable).value, cells=len(jobs), workers=workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell_args, jobs))
    else:
        rows = [run_cell(*job) for job in jobs]
    rows.sort(key=lambda r: (r["cell"], r["repeat"]))
    failed = sum(1 for r in rows if not r["converged"])
    if failed:
        logger.warning(f"{failed} of {len(rows)} student fits did not converge")
    return rows


def cell_medians(rows: Sequence[Dict], column: str = "sigma_eff") -> List[Tuple[float, float]]:
    """(grid value, median of column) per cell, ignoring failed fits"""
    by_value: Dict[float, List[float]] = {}
    for row in rows:
        by_value.setdefault(row["value"], [])
        if math.isfinite(row[column]):
            by_value[row["value"]].append(row[column])
    return [(value, float(np.median(vals)) if vals else float("nan")) for value, vals in sorted(by_value.items())]


def trend(rows: Sequence[Dict], column: str = "sigma_eff") -> float:
    """Spearman correlation of the swept value against the per-cell median"""
    medians = [(v, m) for v, m in cell_medians(rows, column) if math.isfinite(m)]
    if len(medians) < 2:
        return float("nan")
    return spearman([v for v, _ in medians], [m for _, m in medians])


def trend_matches(rho: float, variable: SweepVariable) -> bool:
    """Strong enough rank correlation with the expected sign"""
    return bool(math.isfinite(rho) and abs(rho) >= TREND_MIN_CORRELATION
                and np.sign(rho) == EXPECTED_TREND[SweepVariable(variable)])
