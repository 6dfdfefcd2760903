import numpy as np
import pytest

from relumax import harness
from relumax.dgp import default_direction
from relumax.exceptions import ConfigurationError, ExperimentError
from relumax.harness import (
    CellResult,
    EstimatorSettings,
    ExperimentConfig,
    McReport,
    compute_metrics,
    emit_report,
    metric_rows,
    report_csv,
    report_json,
    report_markdown,
    run_experiment,
)
from relumax.optimizer import OptimizerConfig


def _rotate_towards(theta0, angle):
    """theta0 rotated by ``angle`` within a plane that contains it."""
    from relumax.hyperplane import orthonormal_complement

    ortho = orthonormal_complement(theta0).matrix[:, 1]
    return np.cos(angle) * theta0 + np.sin(angle) * ortho


class TestComputeMetrics:
    def test_all_exact(self, theta0):
        metrics = compute_metrics(np.tile(theta0, (6, 1)), theta0)
        assert metrics["mse"] == [0.0, 0.0, 0.0]
        assert metrics["bias"] == [0.0, 0.0, 0.0]
        assert metrics["l2_norm_bias"] == 0.0
        # 1 - theta0.theta0 is zero up to the rounding of the unit norm
        assert metrics["one_minus_mean_ang"] == pytest.approx(0.0, abs=1e-15)

    def test_antipodal_single(self, theta0):
        metrics = compute_metrics((-theta0)[None, :], theta0)
        assert metrics["one_minus_mean_ang"] == pytest.approx(2.0)
        assert metrics["sd_degenerate"] is True
        np.testing.assert_allclose(
            metrics["mse"], np.square(metrics["bias"]), atol=1e-15
        )

    def test_small_rotation_pair(self, theta0):
        rotated = _rotate_towards(theta0, 0.1)
        metrics = compute_metrics(np.stack([theta0, rotated]), theta0)
        expected = (1.0 - np.cos(0.1)) / 2.0
        assert metrics["one_minus_mean_ang"] == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.0024979173609870897, abs=1e-15)

    def test_mse_identity(self, theta0):
        rng = np.random.default_rng(4)
        estimates = theta0 + 0.05 * rng.standard_normal((40, 3))
        metrics = compute_metrics(estimates, theta0)
        b = 40
        for k in range(3):
            recomposed = (
                metrics["bias"][k] ** 2 + metrics["sd"][k] ** 2 * (b - 1) / b
            )
            assert metrics["mse"][k] == pytest.approx(recomposed, abs=1e-12)

    def test_empty_rejected(self, theta0):
        with pytest.raises(ConfigurationError):
            compute_metrics(np.empty((0, 3)), theta0)

    def test_row_block_shape(self, theta0):
        metrics = compute_metrics(np.tile(theta0, (3, 1)), theta0)
        rows = metric_rows(metrics, 3)
        assert len(rows) == 15
        assert rows[0][0] == "MSE of theta_1"
        assert rows[-1][0] == "1 - Median Angular Similarity"


def _tiny_config(**overrides):
    base = {
        "dgp": {"design": "single_index", "n": [150, 300]},
        "estimator": {
            "kind": "two_stage_oracle",
            "optimizer": {"epochs": 120, "n_starts": 3},
        },
        "replications": 4,
        "master_seed": 77,
        "label": "tiny",
    }
    base.update(overrides)
    return ExperimentConfig.from_dict(base)


class TestConfigParsing:
    def test_round_trip(self):
        config = _tiny_config()
        again = ExperimentConfig.from_dict(config.to_dict())
        assert again.to_dict() == config.to_dict()

    def test_unknown_estimator(self):
        with pytest.raises(ConfigurationError):
            EstimatorSettings.from_dict({"kind": "grid_search"})

    def test_defaults_filled(self):
        settings = EstimatorSettings.from_dict({"kind": "two_stage_kernel"})
        assert settings.kernel is not None
        assert isinstance(settings.optimizer, OptimizerConfig)

    def test_scalar_n_promoted(self):
        config = ExperimentConfig.from_dict(
            {
                "dgp": {"design": "single_index", "n": 100},
                "estimator": {"kind": "two_stage_oracle"},
                "replications": 1,
            }
        )
        assert config.n_values == (100,)

    def test_missing_block_is_config_error(self):
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_dict({"estimator": {"kind": "two_stage_oracle"}})

    def test_thread_env_validation(self, monkeypatch):
        monkeypatch.setenv("RMS_THREADS", "two")
        with pytest.raises(ConfigurationError):
            harness._thread_count()
        monkeypatch.setenv("RMS_THREADS", "3")
        assert harness._thread_count() == 3


@pytest.fixture(scope="module")
def report():
    return run_experiment(_tiny_config())


class TestRunExperiment:
    def test_csv_deterministic(self, report):
        again = run_experiment(_tiny_config())
        assert report_csv(again) == report_csv(report)

    def test_csv_layout(self, report):
        lines = report_csv(report).splitlines()
        assert lines[0] == "metric,n,value"
        assert len(lines) == 1 + 15 * 2

    def test_markdown_layout(self, report):
        md = report_markdown(report)
        assert "| Metric | N=150 | N=300 |" in md
        assert md.count("\n| ") == 16  # header row + 15 metric rows

    def test_json_round_trip(self, report):
        import json

        parsed = McReport.from_dict(json.loads(report_json(report)))
        assert parsed == report

    def test_oracle_is_accurate(self, report, theta0):
        # tiny samples: the criterion plateau is wide, so just a sanity band
        for cell in report.cells:
            assert cell.metrics["one_minus_mean_ang"] < 0.05
        assert report.cells[0].metrics["failures"] == 0

    def test_emit_report_files(self, report, tmp_path):
        paths = emit_report(report, tmp_path, ("csv", "md", "json"))
        names = sorted(p.name for p in paths)
        assert names == ["tiny.csv", "tiny.json", "tiny.md"]
        for p in paths:
            assert p.stat().st_size > 0

    def test_unknown_format(self, report, tmp_path):
        with pytest.raises(ConfigurationError):
            emit_report(report, tmp_path, ("xml",))


class TestFailurePolicy:
    def test_failures_excluded_and_counted(self, monkeypatch):
        from relumax.exceptions import OptimizationError

        real = harness.run_replication

        def flaky(config, n, rep):
            if rep == 2:
                raise OptimizationError("injected failure")
            return real(config, n, rep)

        monkeypatch.setattr(harness, "run_replication", flaky)
        config = _tiny_config(
            replications=30, dgp={"design": "single_index", "n": [100]}
        )
        report = run_experiment(config)
        cell = report.cells[0]
        assert cell.metrics["failures"] == 1
        assert len(cell.estimates) == 29
        assert cell.failures[0]["replication"] == 2

    def test_budget_exceeded(self, monkeypatch):
        from relumax.exceptions import OptimizationError

        def always_fail(config, n, rep):
            raise OptimizationError("injected failure")

        monkeypatch.setattr(harness, "run_replication", always_fail)
        config = _tiny_config(
            replications=4, dgp={"design": "single_index", "n": [100]}
        )
        with pytest.raises(ExperimentError):
            run_experiment(config)


class TestEstimatorDispatch:
    @pytest.mark.parametrize(
        "estimator",
        [
            {"kind": "two_stage_kernel", "kernel": {"bandwidth": 0.6},
             "optimizer": {"epochs": 80, "n_starts": 2}},
            {"kind": "two_stage_series", "series": {"per_dim_degree": 2},
             "optimizer": {"epochs": 80, "n_starts": 2}},
            {"kind": "two_stage_mlp", "mlp": {"epochs": 30},
             "optimizer": {"epochs": 80, "n_starts": 2}},
            {"kind": "joint_dnn", "mlp": {"epochs": 20},
             "joint": {"stage1_epochs": 20, "stage2_epochs": 40,
                        "stage3_epochs": 10}},
        ],
    )
    def test_each_estimator_runs(self, estimator, theta0):
        config = _tiny_config(
            estimator=estimator,
            replications=2,
            dgp={"design": "single_index", "n": [200]},
        )
        report = run_experiment(config)
        cell = report.cells[0]
        assert len(cell.estimates) == 2
        for est in cell.estimates:
            assert abs(np.linalg.norm(est) - 1.0) < 1e-9

    def test_two_index_design_runs(self):
        config = _tiny_config(
            dgp={"design": "two_index", "n": [200]},
            replications=2,
        )
        report = run_experiment(config)
        assert report.cells[0].metrics["one_minus_mean_ang"] < 0.2
