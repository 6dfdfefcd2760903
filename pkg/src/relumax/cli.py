"""Command-line entry points.

Subcommands:
  rms simulate   --config cfg.json [--out DIR] [--format md|csv|json|all]
  rms estimate   --data data.csv --config est.json [--out FILE]
  rms diagnose-v --config cfg.json

Exit codes: 0 success, 2 configuration error, 3 experiment-level failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import first_stage, harness, hyperplane
from .criterion import CriterionSpec, sample_criterion
from .dgp import Dataset, DgpSpec
from .exceptions import ConfigurationError, ExperimentError
from .optimizer import projected_adam

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EXPERIMENT = 3


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON in {path}: {exc}") from exc


def _cmd_simulate(args) -> int:
    config = harness.ExperimentConfig.from_dict(_load_json(args.config))
    report = harness.run_experiment(config)
    formats = ("csv", "md", "json") if args.format == "all" else (args.format,)
    written = harness.emit_report(report, args.out, formats)
    for path in written:
        print(path)
    return EXIT_OK


def _parse_data_csv(path: str):
    """CSV with header x_1_1..x_J_d,y; returns (x (n,J,d), y (n,))."""
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
    except FileNotFoundError as exc:
        raise ConfigurationError(f"data file not found: {path}") from exc
    names = [h.strip() for h in header]
    if not names or names[-1] != "y":
        raise ConfigurationError("data CSV must end with a 'y' column")
    blocks = []
    for name in names[:-1]:
        parts = name.split("_")
        if len(parts) != 3 or parts[0] != "x":
            raise ConfigurationError(f"unexpected covariate column {name!r}")
        blocks.append((int(parts[1]), int(parts[2])))
    n_index = max(b[0] for b in blocks)
    dim = max(b[1] for b in blocks)
    expected = [(j, k) for j in range(1, n_index + 1) for k in range(1, dim + 1)]
    if blocks != expected:
        raise ConfigurationError("covariate columns must be x_1_1..x_J_d in order")
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if raw.shape[1] != len(names):
        raise ConfigurationError("data rows do not match the header width")
    x = raw[:, :-1].reshape(raw.shape[0], n_index, dim)
    return x, raw[:, -1]


def _cmd_estimate(args) -> int:
    config = _load_json(args.config)
    x, y = _parse_data_csv(args.data)
    n_index = x.shape[1]
    centering = float(config.get("centering", 0.5 if n_index == 1 else 0.25))
    data = Dataset(x=x, y_centered=y - centering, centering=centering)
    settings = harness.EstimatorSettings.from_dict(config["estimator"])
    if settings.kind == "two_stage_kernel":
        model = first_stage.fit_kernel(data, settings.kernel)
    elif settings.kind == "two_stage_series":
        model = first_stage.fit_series(data, settings.series)
    elif settings.kind == "two_stage_mlp":
        model = first_stage.fit_mlp(data, settings.mlp)
    else:
        raise ConfigurationError(
            "estimate supports the two-stage kernel/series/mlp estimators"
        )
    spec = CriterionSpec(data, model)
    result = projected_adam(spec, settings.optimizer)
    payload = {
        "theta_hat": [float(v) for v in result.theta_hat],
        "q_hat": result.q_hat,
        "start_index": result.start_index,
        "n": data.n,
        "n_index": n_index,
        "estimator": settings.kind,
    }
    text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_diagnose_v(args) -> int:
    config = _load_json(args.config)
    try:
        dgp_cfg = dict(config["dgp"])
    except (KeyError, TypeError) as exc:
        raise ConfigurationError("diagnose-v config needs a 'dgp' block") from exc
    dgp_cfg["n"] = 1  # sample size is irrelevant for the surfaces
    spec = DgpSpec.from_dict(dgp_cfg)
    kernel_cfg = dict(config.get("kernel", {}))
    if kernel_cfg.get("bandwidth_rule") is not None:
        kernel_cfg["bandwidth_rule"] = tuple(kernel_cfg["bandwidth_rule"])
    kernel = first_stage.KernelSpec(**kernel_cfg)
    nodes = int(config.get("nodes", 64))
    v = hyperplane.curvature_matrix(spec, nodes=nodes)
    omega = hyperplane.influence_variance_matrix(spec, kernel, nodes=nodes)
    eig_v = np.linalg.eigvalsh(v)
    eig_omega = np.linalg.eigvalsh(omega)
    payload = {
        "V": v.tolist(),
        "Omega": omega.tolist(),
        "eigenvalues_V": eig_v.tolist(),
        "eigenvalues_Omega": eig_omega.tolist(),
        "V_theta0_norm": float(np.linalg.norm(v @ spec.theta0)),
        "Omega_theta0_norm": float(np.linalg.norm(omega @ spec.theta0)),
        "profile_square_integral": hyperplane.profile_square_integral(
            kernel, spec.theta0
        ),
    }
    sys.stdout.write(json.dumps(payload, indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rms", description="ReLU-based maximum-score estimation toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", default="out")
    sim.add_argument(
        "--format", choices=("md", "csv", "json", "all"), default="all"
    )
    sim.set_defaults(func=_cmd_simulate)

    est = sub.add_parser("estimate", help="estimate a direction from a CSV")
    est.add_argument("--data", required=True)
    est.add_argument("--config", required=True)
    est.add_argument("--out", default=None)
    est.set_defaults(func=_cmd_estimate)

    diag = sub.add_parser(
        "diagnose-v", help="print the asymptotic surface matrices as JSON"
    )
    diag.add_argument("--config", required=True)
    diag.set_defaults(func=_cmd_diagnose_v)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentError as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return EXIT_EXPERIMENT


if __name__ == "__main__":
    raise SystemExit(main())
