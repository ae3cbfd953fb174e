"""
Command-line options, config files and the resolved run configuration

Every command option can also come from a JSON or YAML file passed with
--config; file keys are the long option names with underscores. Options given
on the command line win over file values, file values win over defaults.
"""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence

import yaml

from src.experiments.datasets import DatasetConfig
from src.experiments.landscape import LandscapeConfig, LandscapeMode
from src.experiments.student_teacher import DEFAULT_BASES, DEFAULT_GRIDS, StudentConfig, SweepSpec, SweepVariable
from src.experiments.theory import TheoryConfig
from src.sphere.klvar import Parameterization
from src.utils.errors import ConfigError
from src.utils.io import write_json
from src.varnet.optim import OptimizerKind
from src.varnet.training import TrainConfig

OUT_DIR_ENV = "SPHEVAR_OUT_DIR"
DEFAULT_OUT_DIR = "runs"
RESOLVED_FILENAME = "config.resolved"
FORMATS = ("csv", "json")


class Option(NamedTuple):
    name: str
    type: Optional[Callable]
    help: str
    choices: Optional[Sequence[str]] = None
    flag: bool = False

    @property
    def flag_name(self) -> str:
        return "--" + self.name.replace("_", "-")


def float_list(value) -> List[float]:
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    return [float(v) for v in str(value).split(",") if v.strip()]


def int_list(value) -> List[int]:
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    return [int(v) for v in str(value).split(",") if v.strip()]


COMMON_OPTIONS = [
    Option("out", str, f"output directory (default ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR})"),
    Option("seed", int, "master seed (default 0)"),
    Option("format", str, "table format (default csv)", choices=FORMATS),
    Option("registry", None, "record the run in <out>/registry.sqlite", flag=True),
]

THEORY_OPTIONS = [
    Option("dim", int, "sphere dimension D (default 100)"),
    Option("kappa_min", float, "smallest kappa on the grid (default 0.1)"),
    Option("kappa_max", float, "largest kappa on the grid (default 1e6)"),
    Option("kappa_steps", int, "log-spaced grid points (default 31)"),
    Option("mc_samples", int, "Monte-Carlo samples per kappa (default 200000)"),
    Option("n_inputs", int, "inputs the variance is averaged over (default min(200, mc_samples // 2))"),
    Option("no_zero", None, "leave out the kappa = 0 row", flag=True),
]

STUDENT_OPTIONS = [
    Option("variable", str, "swept variable (default obs_noise)", choices=[v.value for v in SweepVariable]),
    Option("grid", float_list, "comma-separated sweep values (default per variable)"),
    Option("repeats", int, "repeats per cell (default 5)"),
    Option("obs_noise", float, "observation noise when not swept (default 0.1)"),
    Option("dim", int, "input dimension when not swept (default 100, 50 for the n_samples sweep)"),
    Option("n_samples", int, "sample size when not swept (default 1000)"),
    Option("steps", int, "full-batch optimizer steps (default 2000)"),
    Option("lr_base", float, "direction learning rate (default 1e-3)"),
    Option("lr_noise", float, "noise and log-variance learning rate (default 1e-2)"),
    Option("beta", float, "KL weight (default 1)"),
    Option("patience", int, "plateau patience in steps (default 200)"),
    Option("tolerance", float, "plateau tolerance (default 1e-6)"),
    Option("init_sigma_eff", float, "initial sigma_eff (default 0.1)"),
    Option("workers", int, "worker processes for sweep cells (default 1)"),
]

DATA_OPTIONS = [
    Option("n_classes", int, "synthetic classes (default 10)"),
    Option("data_dim", int, "synthetic input dimension (default 128)"),
    Option("n_train", int, "training examples (default 20000)"),
    Option("n_test", int, "held-out examples (default 5000)"),
    Option("shell_radius", float, "radius of the class-centre shell (default 3.0)"),
    Option("cluster_std", float, "within-class standard deviation (default 1.0)"),
    Option("label_noise", float, "fraction of resampled labels (default 0.1)"),
    Option("data_seed", int, "dataset seed (default: --seed)"),
    Option("data_csv", str, "CSV file with feature columns and a label column"),
    Option("label_column", str, "label column of --data-csv (default label)"),
    Option("test_fraction", float, "held-out fraction of --data-csv (default 0.2)"),
]

TRAIN_OPTIONS = DATA_OPTIONS + [
    Option("hidden", int_list, "comma-separated hidden widths (default 256,256)"),
    Option("beta", float, "maximum KL weight beta (default 1; 0 is the baseline objective)"),
    Option("warmup_epochs", int, "KL warm-up epochs (default 5)"),
    Option("epochs", int, "training epochs (default 20)"),
    Option("batch_size", int, "minibatch size (default 256)"),
    Option("lr_base", float, "learning rate of weights (default 1e-3)"),
    Option("lr_noise", float, "learning rate of rho (default 2e-2)"),
    Option("optimizer", str, "optimizer (default adam)", choices=[k.value for k in OptimizerKind]),
    Option("bn_momentum", float, "BN running-statistics momentum (default 0.1)"),
    Option("bn_epsilon", float, "BN epsilon (default 1e-5)"),
    Option("dataset_size", int, "KL is divided by this (default: training-set size)"),
    Option("grad_norm_cap", float, "abort when the gradient norm exceeds this (default 1e6)"),
    Option("freeze_noise", None, "keep sigma_eff fixed", flag=True),
    Option("init_sigma_eff", float, "initial sigma_eff (default 0.1)"),
    Option("parameterization", str, "sigma_eff parameterization (default softplus)",
           choices=[p.value for p in Parameterization]),
    Option("mc_samples", int, "noisy passes for MC prediction (default 8)"),
    Option("compare_seeds", int, "train method and baseline over this many seeds (default 0: single run)"),
]

LANDSCAPE_OPTIONS = DATA_OPTIONS + [
    Option("checkpoint", str, "checkpoint written by `train`"),
    Option("mode", str, "grid form (default 2d)", choices=[m.value for m in LandscapeMode]),
    Option("steps", int, "grid points per axis (default 51)"),
    Option("layer", int, "probed layer index (default 0)"),
    Option("kappa", float, "analytic kappa (default: inferred from the layer's sigma_eff)"),
    Option("batch_size", int, "fixed evaluation batch size (default 512)"),
]

COMMAND_OPTIONS = {
    "theory": THEORY_OPTIONS,
    "student-teacher": STUDENT_OPTIONS,
    "train": TRAIN_OPTIONS,
    "landscape": LANDSCAPE_OPTIONS,
}


def add_options(parser, options: Sequence[Option]):
    for option in options:
        if option.flag:
            parser.add_argument(option.flag_name, dest=option.name, action="store_true", default=None,
                                help=option.help)
        else:
            parser.add_argument(option.flag_name, dest=option.name, type=option.type, default=None,
                                choices=option.choices, help=option.help)


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    """JSON or YAML mapping; an absent path gives an empty mapping"""
    if not path:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    try:
        if str(path).endswith((".yaml", ".yml")):
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except (yaml.YAMLError, ValueError) as e:
        raise ConfigError(f"cannot parse config file {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return data


def resolve_values(args, options: Sequence[Option], file_values: Dict[str, Any]) -> Dict[str, Any]:
    """Command line over config file; keys never set are left out"""
    known = {o.name for o in options}
    unknown = sorted(set(file_values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = {}
    for option in options:
        value = getattr(args, option.name, None)
        if value is None and option.name in file_values:
            value = file_values[option.name]
            if option.type is not None and value is not None:
                try:
                    value = option.type(value)
                except (TypeError, ValueError) as e:
                    raise ConfigError(f"bad value for {option.name}: {value!r}") from e
            if option.choices is not None and value not in option.choices:
                raise ConfigError(f"{option.name} must be one of {list(option.choices)}, got {value!r}")
        if value is not None:
            values[option.name] = value
    return values


def resolve_out_dir(value: Optional[str]) -> Path:
    return Path(value or os.getenv(OUT_DIR_ENV) or DEFAULT_OUT_DIR)


def _build(cls, values: Dict[str, Any]):
    try:
        return cls(**values).validate()
    except TypeError as e:
        raise ConfigError(str(e)) from e


def _pick(values: Dict[str, Any], mapping: Dict[str, str]) -> Dict[str, Any]:
    return {target: values[source] for source, target in mapping.items() if source in values}


def theory_config(values: Dict[str, Any], seed: int) -> TheoryConfig:
    picked = _pick(values, {k: k for k in ("dim", "kappa_min", "kappa_max", "kappa_steps", "mc_samples", "n_inputs")})
    picked["include_zero"] = not values.get("no_zero", False)
    return _build(TheoryConfig, dict(picked, seed=seed))


def sweep_spec(values: Dict[str, Any], seed: int) -> SweepSpec:
    try:
        variable = SweepVariable(values.get("variable", SweepVariable.OBS_NOISE.value))
    except ValueError as e:
        raise ConfigError(str(e)) from e
    grid = values.get("grid") or DEFAULT_GRIDS[variable]
    base = dict(DEFAULT_BASES[variable])
    base.update(_pick(values, {k: k for k in ("obs_noise", "dim", "n_samples")}))
    return _build(SweepSpec, {
        "variable": variable,
        "grid": tuple(float(v) for v in grid),
        "repeats": values.get("repeats", 5),
        "base": base,
        "seed": seed,
    })


def student_config(values: Dict[str, Any]) -> StudentConfig:
    keys = ("steps", "lr_base", "lr_noise", "beta", "patience", "tolerance", "init_sigma_eff")
    return _build(StudentConfig, _pick(values, {k: k for k in keys}))


def dataset_config(values: Dict[str, Any], seed: int) -> DatasetConfig:
    picked = _pick(values, {
        "n_classes": "n_classes", "data_dim": "dim", "n_train": "n_train", "n_test": "n_test",
        "shell_radius": "shell_radius", "cluster_std": "cluster_std", "label_noise": "label_noise",
        "data_csv": "csv_path", "label_column": "label_column", "test_fraction": "test_fraction",
    })
    picked["seed"] = values.get("data_seed", seed)
    return _build(DatasetConfig, picked)


def train_config(values: Dict[str, Any], seed: int) -> TrainConfig:
    picked = _pick(values, {
        "beta": "beta_max", "warmup_epochs": "warmup_epochs", "epochs": "epochs", "batch_size": "batch_size",
        "lr_base": "lr_base", "lr_noise": "lr_noise", "bn_momentum": "bn_momentum",
        "bn_epsilon": "bn_epsilon", "dataset_size": "dataset_size", "grad_norm_cap": "grad_norm_cap",
        "freeze_noise": "freeze_noise", "init_sigma_eff": "init_sigma_eff", "mc_samples": "mc_samples",
    })
    if "optimizer" in values:
        picked["optimizer"] = OptimizerKind(values["optimizer"])
    if "parameterization" in values:
        picked["parameterization"] = Parameterization(values["parameterization"])
    return _build(TrainConfig, dict(picked, seed=seed))


def landscape_config(values: Dict[str, Any], seed: int) -> LandscapeConfig:
    picked = _pick(values, {"steps": "steps", "layer": "layer_id", "kappa": "kappa", "batch_size": "batch_size"})
    if "mode" in values:
        picked["mode"] = LandscapeMode(values["mode"])
    return _build(LandscapeConfig, dict(picked, seed=seed))


@dataclass
class RunConfig:
    """Everything a command ran with; echoed to <out>/config.resolved"""
    command: str
    out_dir: Path
    seed: int
    format: str = "csv"
    params: Dict[str, Any] = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}, got {self.format!r}")
        return self

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "seed": self.seed,
            "format": self.format,
            "params": self.params,
        }

    def write_resolved(self) -> Path:
        return write_json(self.out_dir / RESOLVED_FILENAME, self.to_dict())
