import math

import numpy as np
import pytest

from src.database import RunRegistry
from src.database.config import REGISTRY_FILENAME
from src.utils.io import (
    atomic_write_text,
    csv_text,
    format_cell,
    read_csv,
    read_json,
    sha256_file,
    to_json,
    write_csv,
    write_json,
)
from src.utils.log_manager import LogManager
from src.varnet.training import TrainRecord


class TestWriters:
    @pytest.mark.parametrize("value, text", [
        (None, ""),
        (True, "true"),
        (np.bool_(False), "false"),
        (0.1, "0.1"),
        (np.float64(1e-300), "1e-300"),
        (np.int64(7), "7"),
        ("x", "x"),
    ])
    def test_format_cell(self, value, text):
        assert format_cell(value) == text

    def test_csv_layout(self):
        text = csv_text("theory", [{"a": 1, "b": 0.5}, {"a": 2, "c": None}])
        assert text == "# sphevar-schema v1 theory\na,b,c\n1,0.5,\n2,,\n"

    def test_csv_read_back(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", "train", [{"x": 1.25, "ok": True}])
        assert read_csv(path) == [{"x": "1.25", "ok": "true"}]

    def test_json_is_sorted_and_nan_free(self):
        text = to_json({"b": float("nan"), "a": np.arange(2), "c": math.inf})
        assert text == '{\n  "a": [\n    0,\n    1\n  ],\n  "b": null,\n  "c": null\n}\n'

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        path = atomic_write_text(tmp_path / "sub" / "f.txt", "hello\n")
        assert path.read_text() == "hello\n"
        assert [p.name for p in path.parent.iterdir()] == ["f.txt"]

    def test_write_json_round_trip(self, tmp_path):
        path = write_json(tmp_path / "d.json", {"k": [1, 2.5]})
        assert read_json(path) == {"k": [1, 2.5]}
        assert len(sha256_file(path)) == 64


class TestLogManager:
    def test_categories_written_under_log_dir(self, tmp_path):
        manager = LogManager()
        manager.configure(tmp_path / "logs")
        try:
            manager.log_experiment('info', "started", seed=1)
            manager.log_error("failed", code=2)
            info = manager.get_log_info()
        finally:
            manager.close()
        assert "experiments.log" in info
        assert "errors.log" in info
        assert "started" in (tmp_path / "logs" / "experiments.log").read_text()

    def test_close_without_configure(self):
        manager = LogManager()
        manager.close()
        assert manager.get_log_info() == {}


class TestRunRegistry:
    def test_run_lifecycle(self, tmp_path):
        registry = RunRegistry(tmp_path)
        try:
            run_id = registry.start_run("train", 3, {"epochs": 2})
            records = [TrainRecord(epoch=e, beta=1.0, kl_weight=0.01, nll=1.0, kl_total=5.0, loss=1.05,
                                   per_layer_sigma_eff=[0.1, 0.2]) for e in range(2)]
            registry.save_epoch_records(run_id, records)
            artifact = write_json(tmp_path / "a.json", {"x": 1})
            registry.save_artifact(run_id, artifact, sha256_file(artifact))
            registry.finish_run(run_id, 0)
            runs = registry.list_runs()
        finally:
            registry.close()
        assert (tmp_path / REGISTRY_FILENAME).exists()
        assert len(runs) == 1
        assert runs[0]["command"] == "train"
        assert runs[0]["seed"] == 3
        assert runs[0]["status"] == "SUCCESS"
        assert runs[0]["epochs"] == 2
        assert runs[0]["artifacts"][0].endswith("a.json")

    def test_failed_run_and_filter(self, tmp_path):
        registry = RunRegistry(tmp_path)
        try:
            first = registry.start_run("theory", 0, {})
            registry.finish_run(first, 3)
            registry.start_run("landscape", 0, {})
            theory_runs = registry.list_runs("theory")
            all_runs = registry.list_runs()
        finally:
            registry.close()
        assert [r["status"] for r in theory_runs] == ["FAILED"]
        assert theory_runs[0]["exit_code"] == 3
        assert [r["status"] for r in all_runs] == ["FAILED", "RUNNING"]
