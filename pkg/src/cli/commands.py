"""
Subcommand handlers

Each handler resolves its configuration, writes config.resolved, runs the
experiment and writes its artifacts into the output directory. Failures are
mapped to exit codes:

    2  invalid configuration or argument domain
    3  a tolerance or consistency check failed
    4  I/O or checkpoint error
    5  numerical abort
"""

import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from rich.console import Console
from rich.table import Table

from src.database import RunRegistry
from src.experiments.classifier import DEFAULT_HIDDEN, calibration_comparison, train_and_evaluate
from src.experiments.datasets import load_dataset
from src.experiments.landscape import BATCH_STREAM, fitted_scale, landscape_correlation, landscape_probe
from src.experiments.student_teacher import (EXPECTED_TREND, TREND_MIN_CORRELATION, SweepVariable, cell_medians,
                                             student_teacher, trend, trend_matches)
from src.experiments.theory import COLUMNS as THEORY_COLUMNS, summarize, theory_check
from src.utils.errors import (CheckpointError, ConfigError, ConsistencyError, NumericalError,
                              SphevarError)
from src.utils.io import schema_line, sha256_file, write_csv, write_json
from src.utils.log_manager import log_manager
from src.utils.rng import substream
from src.varnet.checkpoint import load_checkpoint, save_checkpoint

from .run_config import (COMMAND_OPTIONS, COMMON_OPTIONS, RunConfig, dataset_config, landscape_config,
                         load_config_file, resolve_out_dir, resolve_values, student_config, sweep_spec,
                         theory_config, train_config)

logger = logging.getLogger(__name__)
console = Console()

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TOLERANCE = 3
EXIT_IO = 4
EXIT_NUMERICAL = 5

CHECKPOINT_FILENAME = "checkpoint.json"


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(error, ConsistencyError):
        return EXIT_TOLERANCE
    if isinstance(error, (CheckpointError, OSError)):
        return EXIT_IO
    if isinstance(error, (ConfigError, ValueError)):
        return EXIT_CONFIG
    return EXIT_NUMERICAL


class RunContext:
    """Output directory, resolved config and the optional registry of one invocation"""

    def __init__(self, run: RunConfig, values: Dict[str, Any], use_registry: bool = False):
        self.run = run
        self.values = values
        self.registry: Optional[RunRegistry] = RunRegistry(run.out_dir) if use_registry else None
        self.run_id: Optional[int] = None

    @property
    def out_dir(self) -> Path:
        return self.run.out_dir

    @property
    def seed(self) -> int:
        return self.run.seed

    def begin(self, **params):
        """Record the fully resolved parameters before any work starts"""
        self.run.params = params
        if self.registry is not None:
            self.run_id = self.registry.start_run(self.run.command, self.seed, self.run.to_dict())
        self.record(self.run.write_resolved())

    def record(self, path: Path) -> Path:
        if self.registry is not None and self.run_id is not None:
            self.registry.save_artifact(self.run_id, path, sha256_file(path))
        return path

    def write_table(self, name: str, rows: List[Dict], fieldnames: Optional[List[str]] = None) -> Path:
        if self.run.format == "json":
            document = {"schema": schema_line(self.run.command).lstrip("# "), "rows": rows}
            return self.record(write_json(self.out_dir / f"{name}.json", document))
        return self.record(write_csv(self.out_dir / f"{name}.csv", self.run.command, rows, fieldnames))

    def write_json(self, name: str, data: Any) -> Path:
        return self.record(write_json(self.out_dir / f"{name}.json", data))

    def finish(self, exit_code: int):
        if self.registry is not None:
            if self.run_id is not None:
                self.registry.finish_run(self.run_id, exit_code)
            self.registry.close()


def _summary_table(title: str, data: Dict[str, Any]) -> Table:
    table = Table(title=title)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green")
    for key, value in data.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        table.add_row(key, str(value))
    return table


def cmd_theory(ctx: RunContext) -> int:
    config = theory_config(ctx.values, ctx.seed)
    ctx.begin(theory=config.to_dict())
    rows = theory_check(config)
    ctx.write_table("theory", rows, THEORY_COLUMNS)
    summary = summarize(rows, config.dim)
    ctx.write_json("theory_summary", summary)
    console.print(_summary_table(f"Theory check, D={config.dim}", summary))
    if not summary["passed"]:
        logger.error("theory check outside tolerance")
        return EXIT_TOLERANCE
    return EXIT_OK


def cmd_student_teacher(ctx: RunContext) -> int:
    spec = sweep_spec(ctx.values, ctx.seed)
    config = student_config(ctx.values)
    workers = int(ctx.values.get("workers", 1))
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    ctx.begin(sweep=spec.to_dict(), student=config.to_dict())

    rows = student_teacher(spec, config, workers=workers)
    ctx.write_table("student_teacher", rows)

    variable = SweepVariable(spec.variable)
    rho = trend(rows)
    expected = EXPECTED_TREND[variable]
    summary = {
        "variable": variable.value,
        "cells": len(spec.grid),
        "repeats": spec.repeats,
        "failed_fits": sum(1 for r in rows if not r["converged"]),
        "medians": [{"value": v, "sigma_eff": m} for v, m in cell_medians(rows)],
        "spearman": rho,
        "expected_sign": expected,
        "min_correlation": TREND_MIN_CORRELATION,
        "trend_ok": trend_matches(rho, variable),
    }
    ctx.write_json("student_teacher_summary", summary)

    table = Table(title=f"Student-teacher sweep over {variable.value}")
    table.add_column(variable.value, style="cyan")
    table.add_column("median sigma_eff", style="green")
    for item in summary["medians"]:
        table.add_row(f"{item['value']:g}", f"{item['sigma_eff']:.6g}")
    console.print(table)
    console.print(f"Spearman rho: {rho:.3f} (expected sign {expected:+d})")
    return EXIT_OK


def _hidden(values: Dict[str, Any]) -> List[int]:
    hidden = list(values.get("hidden", DEFAULT_HIDDEN))
    if not hidden or any(h < 1 for h in hidden):
        raise ConfigError(f"hidden widths must be positive, got {hidden}")
    return hidden


def _calibration_document(result) -> Dict[str, Any]:
    return {
        "run": result.label,
        "seed": result.seed,
        "deterministic": result.deterministic.as_dict(),
        "mc": result.sampled.as_dict() if result.sampled else None,
    }


def cmd_train(ctx: RunContext) -> int:
    data_cfg = dataset_config(ctx.values, ctx.seed)
    config = train_config(ctx.values, ctx.seed)
    hidden = _hidden(ctx.values)
    compare_seeds = int(ctx.values.get("compare_seeds", 0))
    if compare_seeds < 0:
        raise ConfigError(f"compare_seeds must be >= 0, got {compare_seeds}")
    ctx.begin(dataset=data_cfg.to_dict(), train=config.to_dict(), hidden=hidden, compare_seeds=compare_seeds)

    if compare_seeds:
        return _compare(ctx, data_cfg, config, hidden, compare_seeds)

    data = load_dataset(data_cfg)
    label = "method" if config.beta_max > 0 else "baseline"
    result = train_and_evaluate(label, data, config, hidden)
    ctx.write_table("train_records", [r.as_row() for r in result.records])
    ctx.record(save_checkpoint(ctx.out_dir / CHECKPOINT_FILENAME, result.model, config, ctx.seed))
    ctx.write_json("calibration", _calibration_document(result))
    if ctx.registry is not None:
        ctx.registry.save_epoch_records(ctx.run_id, result.records, label)

    row = result.row()
    console.print(_summary_table(f"Training ({label})", {k: v for k, v in row.items() if v is not None}))
    return EXIT_OK


def _compare(ctx: RunContext, data_cfg, config, hidden: List[int], count: int) -> int:
    seeds = [ctx.seed + i for i in range(count)]
    outcome = calibration_comparison(data_cfg, config, seeds, hidden)
    records = []
    for study in outcome["studies"]:
        for run in (study.method, study.baseline):
            records.extend({"run": run.label, "seed": run.seed, **r.as_row()} for r in run.records)
            if ctx.registry is not None:
                ctx.registry.save_epoch_records(ctx.run_id, run.records, f"{run.label}-{run.seed}")
    ctx.write_table("train_records", records)
    ctx.write_table("calibration", outcome["rows"])
    ctx.write_json("calibration_summary", outcome["summary"])
    # reliability bins of the first seed, one file per arm
    for run in (outcome["studies"][0].method, outcome["studies"][0].baseline):
        ctx.write_json(f"calibration_{run.label}", _calibration_document(run))
    first = outcome["studies"][0].method
    ctx.record(save_checkpoint(ctx.out_dir / CHECKPOINT_FILENAME, first.model,
                               replace(config, seed=first.seed), first.seed))
    console.print(_summary_table("Calibration comparison", {
        k: v for k, v in outcome["summary"].items() if k != "seeds"}))
    return EXIT_OK


def _landscape_rows(grid, mode: str) -> List[Dict]:
    return [dict(row, mode=mode, layer=grid.layer_id) for row in grid.rows()]


def cmd_landscape(ctx: RunContext) -> int:
    if "checkpoint" not in ctx.values:
        raise ConfigError("landscape needs --checkpoint")
    config = landscape_config(ctx.values, ctx.seed)
    data_cfg = dataset_config(ctx.values, ctx.seed)
    ctx.begin(landscape=config.to_dict(), dataset=data_cfg.to_dict(), checkpoint=ctx.values["checkpoint"])

    model, _, _ = load_checkpoint(Path(ctx.values["checkpoint"]))
    data = load_dataset(data_cfg)
    if data.x_train.shape[1] != model.layers[0].in_dim:
        raise ConfigError(f"dataset has {data.x_train.shape[1]} features, "
                          f"checkpoint expects {model.layers[0].in_dim}")
    n = data.x_train.shape[0]
    index = np.sort(substream(config.seed, BATCH_STREAM).choice(n, size=min(config.batch_size, n), replace=False))

    result = landscape_probe(model, data.x_train[index], data.y_train[index], config)
    mode = result.empirical.mode.value
    ctx.write_table("landscape_empirical", _landscape_rows(result.empirical, mode))
    ctx.write_table("landscape_analytic", _landscape_rows(result.analytic, mode))
    summary = {
        "mode": mode,
        "layer": config.layer_id,
        "steps": config.steps,
        "kappa": result.kappa,
        "centre_loss": result.centre_loss,
        "empirical_minimum": list(result.empirical.minimum()),
        "analytic_minimum": list(result.analytic.minimum()),
        "fitted_scale": fitted_scale(result.empirical, result.analytic, result.centre_loss),
        "correlation": landscape_correlation(result),
    }
    ctx.write_json("landscape_summary", summary)
    console.print(_summary_table(f"Landscape ({mode}, layer {config.layer_id})", summary))
    return EXIT_OK


HANDLERS: Dict[str, Callable[[RunContext], int]] = {
    "theory": cmd_theory,
    "student-teacher": cmd_student_teacher,
    "train": cmd_train,
    "landscape": cmd_landscape,
}


def run_command(command: str, args) -> int:
    """Resolve options, run the handler and turn failures into exit codes"""
    ctx = None
    code = EXIT_NUMERICAL
    try:
        file_values = load_config_file(getattr(args, "config", None))
        common_keys = {o.name for o in COMMON_OPTIONS}
        common = resolve_values(args, COMMON_OPTIONS, {k: v for k, v in file_values.items() if k in common_keys})
        values = resolve_values(args, COMMAND_OPTIONS[command],
                                {k: v for k, v in file_values.items() if k not in common_keys})
        run = RunConfig(command, resolve_out_dir(common.get("out")), int(common.get("seed", 0)),
                        common.get("format", "csv")).validate()
        run.out_dir.mkdir(parents=True, exist_ok=True)
        log_manager.configure(run.out_dir / "logs")
        ctx = RunContext(run, values, use_registry=bool(common.get("registry", False)))
        log_manager.log_experiment('info', f"{command} started", seed=run.seed, out_dir=run.out_dir.as_posix())
        code = HANDLERS[command](ctx)
    except (SphevarError, OSError, ValueError) as e:
        code = exit_code_for(e)
        logger.error(f"{command} failed: {e}")
        log_manager.log_error(f"{command} failed", error=type(e).__name__, detail=str(e), exit_code=code)
        console.print(f"[red]Error:[/red] {e}")
    finally:
        if ctx is not None:
            try:
                ctx.finish(code)
            except Exception as e:
                logger.error(f"Registry update failed: {e}")
        log_manager.log_experiment('info', f"{command} finished", exit_code=code)
        log_manager.close()
    return code
