import math

import numpy as np
import pytest

from src.experiments.classifier import (
    BASELINE_SIGMA_EFF,
    baseline_config,
    calibration_comparison,
    classifier_study,
    train_and_evaluate,
)
from src.experiments.datasets import (
    DatasetConfig,
    linear_teacher,
    load_csv_dataset,
    load_dataset,
    synthetic_classification,
)
from src.experiments.landscape import (
    Axis,
    LandscapeConfig,
    LandscapeGrid,
    LandscapeMode,
    analytic_grid,
    cos_angle,
    landscape_correlation,
    landscape_probe,
    tangent_basis,
)
from src.experiments.student_teacher import (
    DEFAULT_GRIDS,
    StudentConfig,
    SweepSpec,
    SweepVariable,
    cell_medians,
    student_teacher,
    trend,
    trend_matches,
)
from src.experiments.theory import TheoryConfig, check_self_consistency, summarize, theory_check
from src.utils.errors import ConfigError, ConsistencyError, DomainError
from src.utils.rng import substream
from src.varnet.model import PROBE, NoisyMLP
from src.varnet.training import TrainConfig, objective

SMALL_DATA = DatasetConfig(n_classes=3, dim=8, n_train=200, n_test=100, seed=0)
SMALL_TRAIN = TrainConfig(epochs=2, warmup_epochs=1, batch_size=50, mc_samples=4, seed=0)


class TestDatasets:
    def test_synthetic_shapes_and_labels(self):
        data = synthetic_classification(SMALL_DATA)
        assert data.x_train.shape == (200, 8)
        assert data.x_test.shape == (100, 8)
        assert data.n_classes == 3
        assert set(np.unique(data.y_train)) <= {0, 1, 2}

    def test_synthetic_is_deterministic(self):
        a = synthetic_classification(SMALL_DATA)
        b = synthetic_classification(SMALL_DATA)
        np.testing.assert_array_equal(a.x_train, b.x_train)
        np.testing.assert_array_equal(a.y_test, b.y_test)

    def test_linear_teacher_unit_norm(self):
        data = linear_teacher(20, 50, 0.1, 3, 0, 0)
        assert np.linalg.norm(data.teacher) == pytest.approx(1.0, abs=1e-12)
        assert data.x.shape == (50, 20)
        assert data.y.shape == (50,)

    def test_linear_teacher_streams_differ(self):
        a = linear_teacher(20, 50, 0.1, 3, 0, 0)
        b = linear_teacher(20, 50, 0.1, 3, 0, 1)
        assert not np.allclose(a.teacher, b.teacher)

    def test_linear_teacher_rejects_bad_domain(self):
        with pytest.raises(DomainError):
            linear_teacher(1, 50, 0.1, 0)
        with pytest.raises(DomainError):
            linear_teacher(5, 50, -0.1, 0)

    def test_csv_dataset(self, tmp_path):
        path = tmp_path / "data.csv"
        lines = ["f0,f1,label"] + [f"{i * 0.1},{-i * 0.2},{i % 2}" for i in range(20)]
        path.write_text("\n".join(lines) + "\n")
        data = load_dataset(DatasetConfig(csv_path=str(path), test_fraction=0.25))
        assert data.x_train.shape == (15, 2)
        assert data.x_test.shape == (5, 2)
        assert data.n_classes == 2

    def test_csv_dataset_missing_label_column(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("a,b\n1,2\n3,4\n5,6\n")
        with pytest.raises(ConfigError):
            load_csv_dataset(DatasetConfig(csv_path=str(path)))

    def test_csv_dataset_unreadable(self, tmp_path):
        with pytest.raises(OSError):
            load_csv_dataset(DatasetConfig(csv_path=str(tmp_path / "missing.csv")))

    def test_config_rejects_unknown_keys(self):
        with pytest.raises(ConfigError):
            DatasetConfig.from_dict({"n_classes": 3, "colour": "red"})


class TestTheory:
    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TheoryConfig(kappa_min=10.0, kappa_max=1.0).validate()
        with pytest.raises(ConfigError):
            TheoryConfig(mc_samples=0).validate()

    def test_n_inputs_follows_small_sample_budget(self):
        assert TheoryConfig(dim=10, mc_samples=100).validate().n_inputs == 50
        assert TheoryConfig(mc_samples=1).validate().n_inputs == 1
        assert TheoryConfig().n_inputs == 200

    def test_explicit_n_inputs_must_fit_budget(self):
        with pytest.raises(ConfigError):
            TheoryConfig(dim=10, mc_samples=100, n_inputs=80).validate()

    def test_grid_starts_at_zero(self):
        grid = TheoryConfig(kappa_steps=5).kappa_grid()
        assert len(grid) == 6
        assert grid[0] == 0.0
        assert grid[1] == pytest.approx(0.1)
        assert grid[-1] == pytest.approx(1e6)

    def test_small_sweep(self):
        config = TheoryConfig(dim=10, kappa_min=1.0, kappa_max=1000.0, kappa_steps=4,
                              mc_samples=4000, n_inputs=20, seed=1)
        rows = theory_check(config)
        assert len(rows) == 5
        zero = rows[0]
        assert zero["kappa"] == 0.0
        assert zero["sigma_u_sq_exact"] == 1.0
        assert zero["kl_exact"] == 0.0
        assert zero["sigma_eff"] is None
        for row in rows[1:]:
            assert 0.0 < row["sigma_u_sq_exact"] < 1.0
            assert row["sigma_eff"] > 0.0
        summary = summarize(rows, config.dim)
        assert summary["rows"] == 5
        assert summary["zero_row_ok"]

    def test_variance_decreases_along_grid(self):
        rows = theory_check(TheoryConfig(dim=10, kappa_min=1.0, kappa_max=1000.0, kappa_steps=4,
                                         mc_samples=2000, n_inputs=10))
        exact = [r["sigma_u_sq_exact"] for r in rows]
        assert all(a > b for a, b in zip(exact, exact[1:]))

    def test_self_consistency_detects_tampering(self):
        rows = theory_check(TheoryConfig(dim=10, kappa_min=1.0, kappa_max=100.0, kappa_steps=2,
                                         mc_samples=200, n_inputs=10))
        rows[-1]["sigma_eff"] *= 1.01
        with pytest.raises(ConsistencyError):
            check_self_consistency(rows)

    @pytest.mark.slow
    def test_default_sweep_within_tolerance(self):
        rows = theory_check(TheoryConfig())
        assert len(rows) >= 30
        summary = summarize(rows, 100)
        assert summary["passed"], summary


class TestStudentTeacher:
    def test_default_spec(self):
        spec = SweepSpec.default(SweepVariable.N_SAMPLES)
        assert list(spec.grid) == DEFAULT_GRIDS[SweepVariable.N_SAMPLES]
        assert spec.cell_values(300)["dim"] == 50

    def test_unsorted_grid_rejected(self):
        with pytest.raises(ConfigError):
            SweepSpec(SweepVariable.OBS_NOISE, (0.4, 0.1)).validate()

    def test_cell_values_override_base(self):
        spec = SweepSpec(SweepVariable.DIM, (10.0, 20.0), base={"dim": 100, "n_samples": 64}).validate()
        cell = spec.cell_values(20.0)
        assert cell == {"obs_noise": 0.1, "dim": 20, "n_samples": 64}

    def test_student_config_validation(self):
        with pytest.raises(ConfigError):
            StudentConfig(steps=0).validate()
        with pytest.raises(ConfigError):
            StudentConfig.from_dict({"steps": 10, "momentum": 0.9})

    def test_small_sweep_rows(self):
        spec = SweepSpec(SweepVariable.OBS_NOISE, (0.05, 0.8), repeats=2,
                         base={"dim": 10, "n_samples": 60}, seed=4).validate()
        rows = student_teacher(spec, StudentConfig(steps=150))
        assert [(r["cell"], r["repeat"]) for r in rows] == [(0, 0), (0, 1), (1, 0), (1, 1)]
        for row in rows:
            assert row["variable"] == "obs_noise"
            assert row["dim"] == 10
            assert row["steps"] <= 150
            if row["converged"]:
                assert row["sigma_eff"] > 0.0
                assert -1.0 <= row["cosine"] <= 1.0

    def test_sweep_is_deterministic_across_workers(self):
        spec = SweepSpec(SweepVariable.OBS_NOISE, (0.05, 0.8), repeats=1,
                         base={"dim": 10, "n_samples": 60}, seed=2).validate()
        config = StudentConfig(steps=100)
        assert student_teacher(spec, config, workers=1) == student_teacher(spec, config, workers=2)

    def test_cell_medians_and_trend(self):
        rows = [
            {"value": 1.0, "sigma_eff": 0.1}, {"value": 1.0, "sigma_eff": 0.3},
            {"value": 2.0, "sigma_eff": 0.4}, {"value": 2.0, "sigma_eff": float("nan")},
            {"value": 4.0, "sigma_eff": 0.9},
        ]
        assert cell_medians(rows) == [(1.0, pytest.approx(0.2)), (2.0, 0.4), (4.0, 0.9)]
        assert trend(rows) == pytest.approx(1.0)

    def test_trend_needs_two_cells(self):
        assert math.isnan(trend([{"value": 1.0, "sigma_eff": 0.5}]))

    @pytest.mark.parametrize("rho, variable, ok", [
        (0.9, SweepVariable.OBS_NOISE, True),
        (0.3, SweepVariable.OBS_NOISE, False),
        (0.9, SweepVariable.N_SAMPLES, False),
        (-0.8, SweepVariable.N_SAMPLES, True),
        (float("nan"), SweepVariable.DIM, False),
    ])
    def test_trend_matches(self, rho, variable, ok):
        assert trend_matches(rho, variable) is ok

    @pytest.mark.slow
    @pytest.mark.parametrize("variable", list(SweepVariable))
    def test_trend_direction(self, variable):
        rows = student_teacher(SweepSpec.default(variable), StudentConfig(), workers=4)
        rho = trend(rows)
        assert trend_matches(rho, variable), rho


class TestClassifier:
    def test_baseline_config(self):
        baseline = baseline_config(TrainConfig(beta_max=0.5, seed=7))
        assert baseline.beta_max == 0.0
        assert baseline.warmup_epochs == 0
        assert baseline.freeze_noise
        assert baseline.init_sigma_eff == BASELINE_SIGMA_EFF
        assert baseline.seed == 7

    def test_method_needs_kl(self):
        with pytest.raises(ConfigError):
            classifier_study(SMALL_DATA, TrainConfig(beta_max=0.0))

    def test_seed_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            classifier_study(SMALL_DATA, SMALL_TRAIN, baseline_config(TrainConfig(seed=1)))

    def test_train_and_evaluate(self):
        data = synthetic_classification(SMALL_DATA)
        result = train_and_evaluate("method", data, SMALL_TRAIN, hidden=(16, 12))
        assert len(result.records) == 2
        assert len(result.sigma_profile) == 2
        assert all(s > 0 and math.isfinite(s) for s in result.sigma_profile)
        assert 0.0 <= result.deterministic.accuracy <= 1.0
        assert result.sampled is not None
        row = result.row()
        assert row["run"] == "method"
        assert "sigma_eff_1" in row

    def test_comparison_summary(self):
        outcome = calibration_comparison(SMALL_DATA, SMALL_TRAIN, seeds=[0], hidden=(16,))
        assert [r["run"] for r in outcome["rows"]] == ["method", "baseline"]
        summary = outcome["summary"]
        assert summary["seeds"] == [0]
        assert summary["passed"] == (summary["ece_not_worse"] and summary["accuracy_kept"])

    def test_baseline_keeps_noise_tiny(self):
        study = classifier_study(SMALL_DATA, SMALL_TRAIN, hidden=(16,))
        assert study.baseline.sigma_profile[0] == pytest.approx(BASELINE_SIGMA_EFF, rel=1e-4)
        assert all(r.kl_total == 0.0 for r in study.baseline.records)

    @pytest.mark.slow
    def test_calibration_not_worse(self):
        outcome = calibration_comparison(DatasetConfig(), TrainConfig(), seeds=range(5))
        assert outcome["summary"]["passed"], outcome["summary"]
        for study in outcome["studies"]:
            assert all(0.0 < s < 10.0 for s in study.method.sigma_profile)


def probe_model(seed=0, in_dim=6, hidden=(5,), classes=3, n=40):
    rng = substream(seed, 0)
    model = NoisyMLP.build(in_dim, list(hidden), classes, rng, init_sigma_eff=0.2)
    x = rng.standard_normal((n, in_dim))
    y = rng.integers(0, classes, size=n)
    return model, x, y


class TestLandscape:
    def test_axis_values(self):
        np.testing.assert_allclose(Axis("a", -1.0, 1.0, 5).values(), [-1.0, -0.5, 0.0, 0.5, 1.0])

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            LandscapeConfig(steps=1).validate()
        with pytest.raises(ConfigError):
            LandscapeConfig(x_range=(1.0, -1.0)).validate()
        with pytest.raises(ConfigError):
            LandscapeConfig.from_dict({"mode": "3d"})

    def test_tangent_basis_orthonormal(self, random_unit):
        w_hat = random_unit(30, seed=3)
        basis = tangent_basis(w_hat, 2, substream(0, 0))
        for r in basis:
            assert np.linalg.norm(r) == pytest.approx(1.0, abs=1e-12)
            assert abs(r @ w_hat) < 1e-10
        assert abs(basis[0] @ basis[1]) < 1e-10

    def test_cos_angle_of_zero_vector(self, random_unit):
        w_hat = random_unit(4)
        assert cos_angle(np.zeros(4), w_hat) == 0.0
        assert cos_angle(3.0 * w_hat, w_hat) == pytest.approx(1.0)

    def test_analytic_grid_zero_at_centre(self):
        axes = LandscapeConfig(steps=5).validate().axes()
        grid = analytic_grid(LandscapeMode.TWO_D, axes, 7.0, 0, [])
        assert grid.losses[2, 2] == 0.0
        assert grid.losses[0, 0] == pytest.approx(7.0 * (1.0 - 1.0 / math.sqrt(1.0 + 2 * 1.5 ** 2)))
        assert grid.minimum() == (0.0, 0.0)

    def test_one_d_minimum_ties_break_to_centre(self):
        config = LandscapeConfig(mode=LandscapeMode.ONE_D, steps=7).validate()
        grid = analytic_grid(LandscapeMode.ONE_D, config.axes(), 5.0, 0, [])
        assert grid.minimum() == (0.0, 1.0)

    def test_constant_grid_minimum_is_centre(self):
        axes = (Axis("a", -1.0, 1.0, 5), Axis("b", -1.0, 1.0, 5))
        grid = LandscapeGrid(LandscapeMode.TWO_D, *axes, [], 0, np.ones((5, 5)))
        assert grid.minimum() == (0.0, 0.0)

    def test_probe_two_d(self):
        model, x, y = probe_model()
        before = model.layers[0].weights.copy()
        reference = objective(model, (x, y), 0.0, mode=PROBE).nll
        result = landscape_probe(model, x, y, LandscapeConfig(steps=5, kappa=3.0))
        np.testing.assert_array_equal(model.layers[0].weights, before)
        assert result.empirical.losses.shape == (5, 5)
        assert len(result.empirical.rows()) == 25
        assert set(result.empirical.rows()[0]) == {"a", "b", "loss"}
        assert result.centre_loss == pytest.approx(reference, rel=1e-12)
        assert result.empirical.losses[2, 2] == pytest.approx(reference, rel=1e-9)
        assert result.analytic.losses[2, 2] == 0.0
        assert result.kappa == 3.0
        assert -1.0 <= landscape_correlation(result) <= 1.0

    def test_probe_one_d_rows(self):
        model, x, y = probe_model(seed=1)
        result = landscape_probe(model, x, y, LandscapeConfig(mode=LandscapeMode.ONE_D, steps=4))
        assert set(result.empirical.rows()[0]) == {"x", "y", "loss"}
        assert result.kappa > 0.0

    def test_probe_is_deterministic(self):
        model, x, y = probe_model(seed=2)
        config = LandscapeConfig(steps=4, seed=9)
        a = landscape_probe(model, x, y, config)
        b = landscape_probe(model, x, y, config)
        np.testing.assert_array_equal(a.empirical.losses, b.empirical.losses)

    def test_probe_rejects_missing_layer(self):
        model, x, y = probe_model()
        with pytest.raises(DomainError):
            landscape_probe(model, x, y, LandscapeConfig(steps=3, layer_id=4))

    @pytest.mark.slow
    def test_trained_landscape(self):
        data = load_dataset(DatasetConfig())
        model = train_and_evaluate("method", data, TrainConfig()).model
        x, y = data.x_train[:512], data.y_train[:512]
        two_d = landscape_probe(model, x, y, LandscapeConfig())
        assert landscape_correlation(two_d) >= 0.8
        one_d = landscape_probe(model, x, y, LandscapeConfig(mode=LandscapeMode.ONE_D))
        x_min, y_min = one_d.empirical.minimum()
        assert abs(x_min) <= 3.0 / 50 + 1e-12
        assert abs(y_min - 1.0) <= 1.5 / 50 + 1e-12
