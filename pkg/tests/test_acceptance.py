"""Acceptance gate: one test per shipped criterion, each printing a
PASS/FAIL line with the measured quantity.

These run the full pipelines at the stated sample sizes and replication
counts, so this module dominates the suite's runtime (several minutes).
"""

import json
import time

import numpy as np
import pytest

from relumax import cli
from relumax.criterion import CriterionSpec, sample_criterion
from relumax.dgp import (
    Dataset,
    DgpSpec,
    default_direction,
    gen_single_index,
    gen_two_index,
    make_rng,
)
from relumax.first_stage import KernelSpec, oracle_regressor
from relumax.harness import ExperimentConfig, run_experiment
from relumax.hyperplane import (
    curvature_matrix,
    hausdorff_integral,
    kernel_slice_profile,
    profile_moment,
    slab_monte_carlo,
)
from relumax.joint import rms_layer_backward, rms_layer_forward
from relumax.mlp import Mlp, MlpSpec

from test_criterion import subgrad_vs_fd

THETA0 = default_direction()


def _announce(number, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {number}: {status} ({detail})")
    return ok


def _experiment(estimator, n_values, replications, design="single_index",
                seed=20_260_401):
    return ExperimentConfig.from_dict(
        {
            "dgp": {"design": design, "n": list(n_values)},
            "estimator": estimator,
            "replications": replications,
            "master_seed": seed,
            "label": "acceptance",
        }
    )


def test_criterion_01_oracle_second_stage():
    start = time.perf_counter()
    config = _experiment({"kind": "two_stage_oracle"}, [5000], 50)
    report = run_experiment(config)
    elapsed = time.perf_counter() - start
    err = report.cells[0].metrics["one_minus_mean_ang"]
    ok = err < 1e-3 and elapsed < 120.0
    assert _announce(1, ok, f"oracle 1-mean_ang={err:.2e}, {elapsed:.1f}s")


def test_criterion_02_kernel_two_stage_bands():
    start = time.perf_counter()
    config = _experiment({"kind": "two_stage_kernel"}, [1000, 5000], 200)
    report = run_experiment(config)
    elapsed = time.perf_counter() - start
    by_n = {cell.n: cell.metrics["one_minus_mean_ang"] for cell in report.cells}
    ok = (
        0.002 <= by_n[1000] <= 0.018
        and 0.0012 <= by_n[5000] <= 0.011
        and elapsed < 1200.0
    )
    assert _announce(
        2,
        ok,
        f"kernel n=1000: {by_n[1000]:.5f} in [0.002,0.018]; "
        f"n=5000: {by_n[5000]:.5f} in [0.0012,0.011]; {elapsed:.0f}s",
    )


def test_criterion_03_mlp_and_joint_single_index():
    mlp_report = run_experiment(
        _experiment({"kind": "two_stage_mlp"}, [5000], 100)
    )
    joint_report = run_experiment(
        _experiment({"kind": "joint_dnn"}, [5000], 100)
    )
    mlp_err = mlp_report.cells[0].metrics["one_minus_mean_ang"]
    joint_err = joint_report.cells[0].metrics["one_minus_mean_ang"]
    ok = mlp_err < 0.012 and joint_err < 0.012
    assert _announce(
        3, ok, f"two-stage mlp {mlp_err:.5f} < 0.012; joint {joint_err:.5f} < 0.012"
    )


def test_criterion_04_two_index_rate_direction():
    report = run_experiment(
        _experiment({"kind": "two_stage_mlp"}, [1000, 5000], 100,
                    design="two_index")
    )
    by_n = {cell.n: cell.metrics["one_minus_mean_ang"] for cell in report.cells}
    ok = by_n[5000] <= by_n[1000] / 3.0
    assert _announce(
        4, ok, f"two-index mlp {by_n[1000]:.5f} -> {by_n[5000]:.5f} "
        f"(ratio {by_n[5000] / by_n[1000]:.3f} <= 1/3)"
    )


def test_criterion_05_kernel_rate_slope():
    n_values = [500, 1000, 2000, 5000]
    report = run_experiment(
        _experiment({"kind": "two_stage_kernel"}, n_values, 100)
    )
    medians = [cell.metrics["one_minus_median_ang"] for cell in report.cells]
    slope = np.polyfit(np.log(n_values), np.log(medians), 1)[0]
    ok = -1.2 <= slope <= -0.4
    assert _announce(
        5, ok, f"log-median slope {slope:.3f} in [-1.2, -0.4]; "
        f"medians {['%.5f' % m for m in medians]}"
    )


def test_criterion_06_subgradient_suite():
    errors = []
    seed = 0
    while len(errors) < 1000:
        err = subgrad_vs_fd(50_000 + seed, n=20, n_index=1 + seed % 2)
        seed += 1
        if err is not None:
            errors.append(err)
    worst = max(errors)
    ok = worst < 1e-5
    assert _announce(6, ok, f"{len(errors)} configs, max rel err {worst:.2e}")


def test_criterion_07_network_gradient_suite():
    rng = make_rng(99)
    x = rng.uniform(-2, 2, size=(5, 3))
    y = rng.uniform(-0.5, 0.5, size=5)
    net = Mlp(3, MlpSpec(hidden_width=6, hidden_layers=2, seed=17))
    _, grads = net.mse_and_grads(x, y)
    flat_grad = np.concatenate([g.ravel() for g in grads])
    flat0 = net.get_flat()
    step = 1e-5
    fd = np.zeros_like(flat0)
    for k in range(flat0.size):
        for sign in (1.0, -1.0):
            pert = flat0.copy()
            pert[k] += sign * step
            net.set_flat(pert)
            fd[k] += sign * np.mean((net.predict(x) - y) ** 2)
        fd[k] /= 2 * step
    net.set_flat(flat0)
    mlp_err = np.abs(fd - flat_grad).max() / max(np.abs(fd).max(), 1e-8)

    layer_err = 0.0
    checked = 0
    while checked < 200:
        xb = rng.uniform(-2, 2, size=(2, 3))
        h = rng.uniform(-0.6, 0.6)
        theta = rng.standard_normal(3)
        theta /= np.linalg.norm(theta)
        idx = xb @ theta
        neg = np.sort(np.maximum(-idx, 0.0))
        pos = np.sort(np.maximum(idx, 0.0))
        margins = [
            np.abs(idx).min(),
            abs(h - neg[0]),
            abs(-h - pos[0]),
        ]
        for rect in (neg, pos):
            if rect[0] > 0.0:  # only active min ties are kinks
                margins.append(rect[1] - rect[0])
        if min(margins) <= 1e-3:
            continue
        checked += 1
        d_h, d_theta = rms_layer_backward(h, xb, theta, 1.0, 1.0)
        fd_step = 1e-6

        def total(hv, th):
            gp, gm = rms_layer_forward(hv, xb, th)
            return gp + gm

        fd_h = (total(h + fd_step, theta) - total(h - fd_step, theta)) / (2 * fd_step)
        layer_err = max(
            layer_err, abs(fd_h - d_h) / max(abs(fd_h), abs(d_h), 1e-8)
        )
        for k in range(3):
            e = np.zeros(3)
            e[k] = fd_step
            fd_t = (total(h, theta + e) - total(h, theta - e)) / (2 * fd_step)
            layer_err = max(
                layer_err,
                abs(fd_t - d_theta[k]) / max(abs(fd_t), abs(d_theta[k]), 1e-8),
            )
    ok = mlp_err < 1e-4 and layer_err < 1e-4
    assert _announce(
        7, ok, f"network grad rel err {mlp_err:.2e}; layer rel err {layer_err:.2e}"
    )


def test_criterion_08_hyperplane_suite():
    e1 = np.array([1.0, 0.0, 0.0])
    ones = lambda pts: np.ones(pts.shape[0])
    area = hausdorff_integral(ones, e1, 0.0, -2.0, 2.0, nodes=32)
    area_ok = abs(area - 16.0) < 1e-10

    spec = DgpSpec(design="single_index", n=10, theta0=THETA0)
    v = curvature_matrix(spec, nodes=64)
    vtheta_ok = np.linalg.norm(v @ THETA0) < 1e-8
    eigs = np.linalg.eigvalsh(v)
    psd_rank_ok = (
        eigs.min() >= -1e-8 * np.trace(v)
        and abs(eigs[0]) < 1e-8 * eigs[-1]
        and eigs[1] / eigs[-1] >= 1e-6
    )

    def v_integrand(pts):
        return 0.2 * (1.0 / 64.0) * np.einsum("bi,bj->bij", pts, pts)

    est, se = slab_monte_carlo(
        v_integrand, THETA0, 0.0, -2.0, 2.0, draws=6_000_000, seed=40
    )
    slab_ok = np.all(np.abs(v - est) <= 3 * se + 1e-12)

    kernel = KernelSpec()
    total = profile_moment(kernel, THETA0, 0, nodes=32, t_nodes=120)
    profile_dev = max(
        abs(
            kernel_slice_profile(kernel, THETA0, t, nodes=40)
            - np.exp(-0.5 * t * t) / np.sqrt(2 * np.pi)
        )
        for t in (0.0, 0.5, 1.0, 1.8, 2.7)
    )
    profile_ok = abs(total - 1.0) < 1e-6 and profile_dev < 1e-6

    ok = area_ok and vtheta_ok and psd_rank_ok and slab_ok and profile_ok
    assert _announce(
        8,
        ok,
        f"area err {abs(area - 16):.1e}; |V theta0| {np.linalg.norm(v @ THETA0):.1e}; "
        f"eigs {eigs[0]:.1e}/{eigs[1]:.3e}/{eigs[2]:.3e}; slab max z "
        f"{np.abs((v - est) / se).max():.2f}; profile dev {profile_dev:.1e}; "
        f"int G err {abs(total - 1):.1e}",
    )


def test_criterion_09_criterion_bounds():
    rng = make_rng(123)
    worst_gap = -np.inf
    for _ in range(10_000):
        n = int(rng.integers(5, 40))
        n_index = int(rng.integers(1, 3))
        x = rng.uniform(-2.0, 2.0, size=(n, n_index, 3))
        h = rng.uniform(-0.5, 0.5, size=n)
        theta = rng.standard_normal(3)
        theta /= np.linalg.norm(theta)
        data = Dataset(x=x, y_centered=np.zeros(n), centering=0.5)
        spec = CriterionSpec(data, h)
        gap = sample_criterion(spec, theta).value - np.abs(h).mean()
        worst_gap = max(worst_gap, gap)
    bound_ok = worst_gap <= 1e-15

    eq_gaps = []
    for design, gen in (
        ("single_index", gen_single_index),
        ("two_index", gen_two_index),
    ):
        data = gen(DgpSpec(design=design, n=4000, seed=55))
        model = oracle_regressor(design, THETA0, data.n_index, data.dim)
        spec = CriterionSpec(data, model)
        value = sample_criterion(spec, THETA0).value
        eq_gaps.append(abs(value - np.abs(spec.h_values).mean()))
    equality_ok = max(eq_gaps) <= 1e-12
    ok = bound_ok and equality_ok
    assert _announce(
        9, ok, f"worst bound gap {worst_gap:.1e}; equality gaps "
        f"{eq_gaps[0]:.1e}/{eq_gaps[1]:.1e}"
    )


def test_criterion_10_simulate_determinism(tmp_path):
    payload = {
        "dgp": {"design": "single_index", "n": [300]},
        "estimator": {
            "kind": "two_stage_kernel",
            "optimizer": {"epochs": 150, "n_starts": 3},
        },
        "replications": 5,
        "master_seed": 314,
        "label": "determinism",
    }
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(payload))
    outs = []
    for run in ("a", "b"):
        out_dir = tmp_path / run
        rc = cli.main(
            ["simulate", "--config", str(cfg), "--out", str(out_dir),
             "--format", "csv"]
        )
        assert rc == 0
        outs.append((out_dir / "determinism.csv").read_bytes())
    ok = outs[0] == outs[1]
    assert _announce(10, ok, f"{len(outs[0])} CSV bytes, byte-identical={ok}")
