"""Monte Carlo orchestration: run experiment cells, aggregate the metric
block, and emit CSV / Markdown / JSON reports.

Replications are independent: data, first-stage and optimizer seeds all
derive from (master seed, sample size, replication, role), so runs are
replayable and order-independent, and the emitted CSV is byte-identical
across repeated runs of the same config.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import first_stage
from .criterion import CriterionSpec, sample_criterion
from .dgp import (
    Dataset,
    DgpSpec,
    SINGLE_INDEX,
    TWO_INDEX,
    default_direction,
    derive_seed,
    generate,
)
from .exceptions import (
    ConfigurationError,
    ExperimentError,
    OptimizationError,
    TrainingError,
)
from .joint import JointTrainConfig, RmsNetwork, joint_fit
from .mlp import MlpSpec
from .optimizer import OptimizerConfig, OptResult, projected_adam

ESTIMATOR_KINDS = (
    "two_stage_kernel",
    "two_stage_series",
    "two_stage_mlp",
    "two_stage_oracle",
    "joint_dnn",
)

FAILURE_BUDGET = 0.05

# seed roles for per-replication stream derivation
_ROLE_DATA = 0
_ROLE_FIRST_STAGE = 1
_ROLE_OPTIMIZER = 2


@dataclass(frozen=True)
class EstimatorSettings:
    """Tagged estimator choice with its sub-configurations."""

    kind: str
    kernel: Optional[first_stage.KernelSpec] = None
    series: Optional[first_stage.SeriesSpec] = None
    mlp: Optional[MlpSpec] = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    joint: Optional[JointTrainConfig] = None

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ConfigurationError(f"unknown estimator kind {self.kind!r}")
        if self.kind == "two_stage_kernel" and self.kernel is None:
            object.__setattr__(self, "kernel", first_stage.KernelSpec())
        if self.kind == "two_stage_series" and self.series is None:
            object.__setattr__(self, "series", first_stage.SeriesSpec())
        if self.kind in ("two_stage_mlp", "joint_dnn") and self.mlp is None:
            object.__setattr__(self, "mlp", MlpSpec())
        if self.kind == "joint_dnn" and self.joint is None:
            object.__setattr__(self, "joint", JointTrainConfig())

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kernel is not None:
            out["kernel"] = asdict(self.kernel)
        if self.series is not None:
            out["series"] = asdict(self.series)
        if self.mlp is not None:
            out["mlp"] = asdict(self.mlp)
        out["optimizer"] = _optimizer_to_dict(self.optimizer)
        if self.joint is not None:
            out["joint"] = asdict(self.joint)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatorSettings":
        kind = data.get("kind")
        if kind not in ESTIMATOR_KINDS:
            raise ConfigurationError(f"unknown estimator kind {kind!r}")
        kwargs = {"kind": kind}
        if "kernel" in data:
            spec = dict(data["kernel"])
            rule = spec.get("bandwidth_rule")
            if rule is not None:
                spec["bandwidth_rule"] = tuple(rule)
            kwargs["kernel"] = first_stage.KernelSpec(**spec)
        if "series" in data:
            kwargs["series"] = first_stage.SeriesSpec(**data["series"])
        if "mlp" in data:
            kwargs["mlp"] = MlpSpec(**data["mlp"])
        if "optimizer" in data:
            opt = dict(data["optimizer"])
            if isinstance(opt.get("init"), list):
                opt["init"] = np.asarray(opt["init"], dtype=np.float64)
            kwargs["optimizer"] = OptimizerConfig(**opt)
        if "joint" in data:
            kwargs["joint"] = JointTrainConfig(**data["joint"])
        return cls(**kwargs)


def _optimizer_to_dict(config: OptimizerConfig) -> dict:
    out = asdict(config)
    if isinstance(out.get("init"), np.ndarray):
        out["init"] = [float(v) for v in out["init"]]
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a design, an estimator, sample sizes, replications."""

    design: str
    estimator: EstimatorSettings
    n_values: tuple
    replications: int
    master_seed: int = 0
    theta0: np.ndarray = field(default_factory=default_direction)
    d: int = 3
    covariate_low: float = -2.0
    covariate_high: float = 2.0
    label: str = "experiment"

    def __post_init__(self):
        if self.design not in (SINGLE_INDEX, TWO_INDEX):
            raise ConfigurationError(f"unknown design {self.design!r}")
        if self.replications < 1:
            raise ConfigurationError("replications must be >= 1")
        n_values = tuple(int(n) for n in self.n_values)
        if not n_values or any(n < 1 for n in n_values):
            raise ConfigurationError("n_values must be positive integers")
        object.__setattr__(self, "n_values", n_values)
        theta0 = np.asarray(self.theta0, dtype=np.float64).ravel()
        if theta0.size != self.d:
            raise ConfigurationError("theta0 length must equal d")
        if abs(np.linalg.norm(theta0) - 1.0) > 1e-12:
            raise ConfigurationError("theta0 must have unit norm")
        object.__setattr__(self, "theta0", theta0)

    def dgp_spec(self, n: int, seed: int) -> DgpSpec:
        return DgpSpec(
            design=self.design,
            n=n,
            theta0=self.theta0,
            d=self.d,
            covariate_low=self.covariate_low,
            covariate_high=self.covariate_high,
            seed=seed,
        )

    def to_dict(self) -> dict:
        return {
            "dgp": {
                "design": self.design,
                "n": list(self.n_values),
                "theta0": [float(v) for v in self.theta0],
                "d": self.d,
                "covariate_low": self.covariate_low,
                "covariate_high": self.covariate_high,
            },
            "estimator": self.estimator.to_dict(),
            "replications": self.replications,
            "master_seed": self.master_seed,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            dgp = data["dgp"]
            estimator = EstimatorSettings.from_dict(data["estimator"])
            n_raw = dgp["n"]
            n_values = (n_raw,) if isinstance(n_raw, int) else tuple(n_raw)
            theta0 = dgp.get("theta0")
            theta0 = (
                default_direction() if theta0 is None else np.asarray(theta0, float)
            )
            return cls(
                design=dgp["design"],
                estimator=estimator,
                n_values=n_values,
                replications=int(data["replications"]),
                master_seed=int(data.get("master_seed", 0)),
                theta0=theta0,
                d=int(dgp.get("d", theta0.size)),
                covariate_low=float(dgp.get("covariate_low", -2.0)),
                covariate_high=float(dgp.get("covariate_high", 2.0)),
                label=str(data.get("label", "experiment")),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"invalid experiment config: {exc}") from exc


# ---------------------------------------------------------------------------
# metrics


def compute_metrics(estimates, theta0) -> dict:
    """Componentwise and rotation-invariant error summary of the estimates.

    ``sd`` uses the (B-1) denominator, so the exact identity is
    ``mse_k = bias_k**2 + sd_k**2 * (B-1)/B``.  With a single replication
    the SD is reported as 0 and flagged degenerate.
    """
    estimates = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    theta0 = np.asarray(theta0, dtype=np.float64).ravel()
    if estimates.size == 0:
        raise ConfigurationError("compute_metrics needs at least one estimate")
    b = estimates.shape[0]
    err = estimates - theta0
    bias = err.mean(axis=0)
    sd_degenerate = b < 2
    sd = np.zeros_like(bias) if sd_degenerate else estimates.std(axis=0, ddof=1)
    angular = 1.0 - estimates @ theta0
    return {
        "replications": int(b),
        "mse": [float(v) for v in (err**2).mean(axis=0)],
        "bias": [float(v) for v in bias],
        "sd": [float(v) for v in sd],
        "sd_degenerate": bool(sd_degenerate),
        "l1_error": [float(v) for v in np.abs(err).mean(axis=0)],
        "l2_norm_bias": float(np.linalg.norm(bias)),
        "one_minus_mean_ang": float(angular.mean()),
        "one_minus_median_ang": float(np.median(angular)),
    }


def metric_rows(metrics: dict, d: int):
    """(label, value) pairs in the report's fixed row order."""
    rows = []
    for k in range(d):
        rows.append((f"MSE of theta_{k + 1}", metrics["mse"][k]))
    for k in range(d):
        rows.append((f"Bias of theta_{k + 1}", metrics["bias"][k]))
    for k in range(d):
        rows.append((f"SD of theta_{k + 1}", metrics["sd"][k]))
    for k in range(d):
        rows.append((f"L1 Error of theta_{k + 1}", metrics["l1_error"][k]))
    rows.append(("L2 Norm of Bias", metrics["l2_norm_bias"]))
    rows.append(("1 - Mean Angular Similarity", metrics["one_minus_mean_ang"]))
    rows.append(("1 - Median Angular Similarity", metrics["one_minus_median_ang"]))
    return rows


# ---------------------------------------------------------------------------
# replication engine


def _fit_first_stage(config: ExperimentConfig, data: Dataset, seed: int):
    est = config.estimator
    if est.kind == "two_stage_kernel":
        return first_stage.fit_kernel(data, est.kernel)
    if est.kind == "two_stage_series":
        return first_stage.fit_series(data, est.series)
    if est.kind == "two_stage_mlp":
        spec = MlpSpec(
            hidden_width=est.mlp.hidden_width,
            hidden_layers=est.mlp.hidden_layers,
            learning_rate=est.mlp.learning_rate,
            epochs=est.mlp.epochs,
            batch=est.mlp.batch,
            seed=seed,
        )
        return first_stage.fit_mlp(data, spec)
    if est.kind == "two_stage_oracle":
        return first_stage.oracle_regressor(
            config.design, config.theta0, data.n_index, data.dim
        )
    raise ConfigurationError(f"no first stage for estimator {est.kind!r}")


def run_replication(config: ExperimentConfig, n: int, rep: int):
    """One replication; returns (theta_hat, q_hat, OptResult-or-None)."""
    data_seed = derive_seed(config.master_seed, n, rep, _ROLE_DATA)
    fs_seed = derive_seed(config.master_seed, n, rep, _ROLE_FIRST_STAGE)
    opt_seed = derive_seed(config.master_seed, n, rep, _ROLE_OPTIMIZER)
    data = generate(config.dgp_spec(n, data_seed))
    est = config.estimator
    if est.kind == "joint_dnn":
        mlp_spec = MlpSpec(
            hidden_width=est.mlp.hidden_width,
            hidden_layers=est.mlp.hidden_layers,
            learning_rate=est.mlp.learning_rate,
            epochs=est.mlp.epochs,
            batch=est.mlp.batch,
            seed=fs_seed,
        )
        joint_cfg = JointTrainConfig(
            stage1_epochs=est.joint.stage1_epochs,
            stage2_epochs=est.joint.stage2_epochs,
            stage3_epochs=est.joint.stage3_epochs,
            stage1_lr=est.joint.stage1_lr,
            stage2_lr=est.joint.stage2_lr,
            stage3_lr=est.joint.stage3_lr,
            seed=opt_seed,
        )
        net = RmsNetwork(data.n_index, data.dim, mlp_spec)
        theta_hat, net = joint_fit(data, net, joint_cfg)
        # criterion value of the final direction under the trained head
        spec = CriterionSpec(data, lambda xf: net.mlp.predict(xf))
        q_hat = sample_criterion(spec, theta_hat).value
        return theta_hat, q_hat, None
    model = _fit_first_stage(config, data, fs_seed)
    spec = CriterionSpec(data, model)
    opt_cfg = OptimizerConfig(
        learning_rate=est.optimizer.learning_rate,
        epochs=est.optimizer.epochs,
        beta1=est.optimizer.beta1,
        beta2=est.optimizer.beta2,
        epsilon=est.optimizer.epsilon,
        n_starts=est.optimizer.n_starts,
        init=est.optimizer.init,
        seed=opt_seed,
        tangent_projection=est.optimizer.tangent_projection,
        record_trace=est.optimizer.record_trace,
    )
    result = projected_adam(spec, opt_cfg)
    return result.theta_hat, result.q_hat, result


def _replication_task(args):
    config, n, rep = args
    start = time.perf_counter()
    try:
        theta_hat, q_hat, _ = run_replication(config, n, rep)
        elapsed = time.perf_counter() - start
        return rep, [float(v) for v in theta_hat], float(q_hat), elapsed, None
    except (OptimizationError, TrainingError, np.linalg.LinAlgError) as exc:
        elapsed = time.perf_counter() - start
        return rep, None, float("nan"), elapsed, f"{type(exc).__name__}: {exc}"


@dataclass
class CellResult:
    n: int
    estimates: list  # successful replications, in replication order
    q_values: list
    seconds: list
    failures: list  # [{"replication": r, "error": msg}]
    metrics: dict


@dataclass
class McReport:
    config: dict
    cells: list
    total_seconds: float

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "cells": [asdict(c) for c in self.cells],
            "total_seconds": self.total_seconds,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "McReport":
        return cls(
            config=data["config"],
            cells=[CellResult(**c) for c in data["cells"]],
            total_seconds=float(data["total_seconds"]),
        )


def _thread_count() -> int:
    raw = os.environ.get("RMS_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigurationError(f"RMS_THREADS must be an integer, got {raw!r}")


def run_experiment(config: ExperimentConfig) -> McReport:
    """Run every (n, replication) cell and aggregate the metric block.

    Failed replications are recorded and excluded; more than 5% failures in
    a cell aborts the experiment.
    """
    started = time.perf_counter()
    workers = _thread_count()
    cells = []
    for n in config.n_values:
        tasks = [(config, n, rep) for rep in range(config.replications)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                raw = list(pool.map(_replication_task, tasks, chunksize=1))
        else:
            raw = [_replication_task(task) for task in tasks]
        raw.sort(key=lambda item: item[0])  # aggregate in replication order
        estimates, q_values, seconds, failures = [], [], [], []
        for rep, theta, q_hat, elapsed, error in raw:
            seconds.append(elapsed)
            if error is None:
                estimates.append(theta)
                q_values.append(q_hat)
            else:
                failures.append({"replication": rep, "error": error})
        if len(failures) > FAILURE_BUDGET * config.replications:
            raise ExperimentError(
                f"{len(failures)} of {config.replications} replications failed "
                f"at n={n} (budget {FAILURE_BUDGET:.0%}); first error: "
                f"{failures[0]['error']}"
            )
        metrics = compute_metrics(np.asarray(estimates), config.theta0)
        metrics["failures"] = len(failures)
        metrics["mean_seconds"] = float(np.mean(seconds))
        cells.append(
            CellResult(
                n=n,
                estimates=estimates,
                q_values=q_values,
                seconds=seconds,
                failures=failures,
                metrics=metrics,
            )
        )
    return McReport(
        config=config.to_dict(),
        cells=cells,
        total_seconds=time.perf_counter() - started,
    )


# ---------------------------------------------------------------------------
# report emission


def report_csv(report: McReport) -> str:
    d = len(report.config["dgp"]["theta0"])
    lines = ["metric,n,value"]
    for cell in report.cells:
        for label, value in metric_rows(cell.metrics, d):
            lines.append(f"{label},{cell.n},{value!r}")
    return "\n".join(lines) + "\n"


def report_markdown(report: McReport) -> str:
    d = len(report.config["dgp"]["theta0"])
    ns = [cell.n for cell in report.cells]
    header = "| Metric | " + " | ".join(f"N={n}" for n in ns) + " |"
    rule = "|---" * (len(ns) + 1) + "|"
    rows = {}
    order = []
    for cell in report.cells:
        for label, value in metric_rows(cell.metrics, d):
            if label not in rows:
                rows[label] = {}
                order.append(label)
            rows[label][cell.n] = value
    lines = [f"# {report.config.get('label', 'experiment')}", "", header, rule]
    for label in order:
        vals = " | ".join(f"{rows[label][n]:.6f}" for n in ns)
        lines.append(f"| {label} | {vals} |")
    lines.append("")
    failures = sum(len(cell.failures) for cell in report.cells)
    lines.append(
        f"Replications: {report.config['replications']}; failures: {failures}."
    )
    return "\n".join(lines) + "\n"


def report_json(report: McReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def emit_report(report: McReport, out_dir, formats=("csv", "markdown", "json")):
    """Write the report files; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    label = report.config.get("label", "experiment")
    written = []
    renderers = {
        "csv": (f"{label}.csv", report_csv),
        "md": (f"{label}.md", report_markdown),
        "markdown": (f"{label}.md", report_markdown),
        "json": (f"{label}.json", report_json),
    }
    for fmt in formats:
        if fmt not in renderers:
            raise ConfigurationError(f"unknown report format {fmt!r}")
        name, renderer = renderers[fmt]
        path = out / name
        path.write_text(renderer(report))
        written.append(path)
    return written
