import numpy as np
import pytest

from relumax.criterion import CriterionSpec, sample_criterion
from relumax.dgp import DgpSpec, gen_single_index, make_rng
from relumax.exceptions import ConfigurationError, OptimizationError
from relumax.first_stage import oracle_regressor
from relumax.optimizer import (
    OptimizerConfig,
    _initial_directions,
    normalize,
    projected_adam,
)


def _oracle_spec(n, seed, theta0):
    data = gen_single_index(DgpSpec(design="single_index", n=n, seed=seed))
    return CriterionSpec(data, oracle_regressor("single_index", theta0, 1, 3))


class TestNormalize:
    def test_three_four(self):
        np.testing.assert_allclose(
            normalize(np.array([3.0, 4.0, 0.0])), [0.6, 0.8, 0.0]
        )

    def test_already_unit(self):
        v = np.array([1.0, 0.0, 0.0])
        np.testing.assert_allclose(normalize(v), v, atol=1e-16)

    def test_near_zero_rejected(self):
        with pytest.raises(ConfigurationError):
            normalize(np.array([1e-15, 0.0, 0.0]))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            OptimizerConfig(learning_rate=0.0)
        with pytest.raises(ConfigurationError):
            OptimizerConfig(epochs=0)
        with pytest.raises(ConfigurationError):
            OptimizerConfig(n_starts=0)

    def test_initial_directions_unit_and_seeded(self):
        cfg = OptimizerConfig(seed=5, n_starts=6)
        a = _initial_directions(cfg, 3)
        b = _initial_directions(cfg, 3)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-14)
        # extending the start count keeps the common prefix
        wide = _initial_directions(OptimizerConfig(seed=5, n_starts=8), 3)
        np.testing.assert_array_equal(wide[:6], a)


class TestProjectedAdam:
    def test_oracle_accuracy(self, theta0):
        # second stage alone, closed-form h: near-exact recovery
        errs = []
        for seed in range(20):
            spec = _oracle_spec(5000, 6000 + seed, theta0)
            res = projected_adam(spec, OptimizerConfig(seed=seed))
            errs.append(1.0 - res.theta_hat @ theta0)
        assert np.median(errs) < 1e-3

    def test_flat_objective_reports_zero(self, single_small):
        spec = CriterionSpec(single_small, np.zeros(single_small.n))
        cfg = OptimizerConfig(seed=11, epochs=50)
        res = projected_adam(spec, cfg)
        assert res.q_hat == 0.0
        assert res.start_index == 0  # ties break to the lowest start index
        # no gradient anywhere: the final iterate is the initial direction
        init = _initial_directions(cfg, 3)[0]
        np.testing.assert_allclose(res.theta_hat, init, atol=1e-12)

    def test_provided_start_at_truth(self, theta0):
        spec = _oracle_spec(3000, 8, theta0)
        q0 = sample_criterion(spec, theta0).value
        res = projected_adam(
            spec, OptimizerConfig(init=theta0, epochs=500, seed=0)
        )
        assert res.q_hat >= q0 - 1e-6

    def test_warm_start_list(self, theta0):
        spec = _oracle_spec(500, 9, theta0)
        res = projected_adam(
            spec,
            OptimizerConfig(init=[theta0, -theta0], epochs=100, seed=0),
        )
        assert res.start_index == 0

    def test_result_invariants(self, theta0):
        spec = _oracle_spec(800, 10, theta0)
        res = projected_adam(spec, OptimizerConfig(seed=2, epochs=150))
        assert abs(np.linalg.norm(res.theta_hat) - 1.0) < 1e-10
        assert res.q_hat == pytest.approx(
            sample_criterion(spec, res.theta_hat).value, abs=1e-14
        )

    def test_iterates_stay_on_sphere(self, theta0):
        spec = _oracle_spec(400, 12, theta0)
        res = projected_adam(
            spec,
            OptimizerConfig(seed=3, epochs=80, n_starts=2, record_trace=True),
        )
        _, trace_theta = res.start_traces
        norms = np.linalg.norm(trace_theta, axis=2)
        assert np.abs(norms - 1.0).max() < 1e-10

    def test_more_starts_never_worse(self, theta0):
        spec = _oracle_spec(600, 13, theta0)
        few = projected_adam(spec, OptimizerConfig(seed=4, n_starts=3, epochs=120))
        many = projected_adam(spec, OptimizerConfig(seed=4, n_starts=8, epochs=120))
        np.testing.assert_array_equal(many.start_q[:3], few.start_q)
        assert many.q_hat >= few.q_hat

    def test_antipodal_gap(self, theta0):
        spec = _oracle_spec(2000, 14, theta0)
        res = projected_adam(spec, OptimizerConfig(seed=5))
        q_neg = sample_criterion(spec, -res.theta_hat).value
        assert res.q_hat > q_neg

    def test_all_nonfinite_raises(self, single_small):
        # inf regression values blow up the objective on every start
        spec = CriterionSpec(single_small, np.full(single_small.n, np.inf))
        with pytest.raises(OptimizationError):
            projected_adam(spec, OptimizerConfig(seed=6, epochs=5, n_starts=2))

    def test_trace_records_epochs(self, theta0):
        spec = _oracle_spec(300, 15, theta0)
        res = projected_adam(
            spec, OptimizerConfig(seed=7, epochs=40, record_trace=True)
        )
        assert res.trace is not None and len(res.trace) == 41
        assert res.trace[-1][1] == pytest.approx(res.q_hat)

    def test_tangent_projection_variant(self, theta0):
        spec = _oracle_spec(800, 16, theta0)
        res = projected_adam(
            spec,
            OptimizerConfig(seed=8, epochs=300, n_starts=4,
                            tangent_projection=True),
        )
        assert 1.0 - res.theta_hat @ theta0 < 5e-2
        assert abs(np.linalg.norm(res.theta_hat) - 1.0) < 1e-10

    def test_deterministic(self, theta0):
        spec = _oracle_spec(500, 17, theta0)
        a = projected_adam(spec, OptimizerConfig(seed=9, epochs=100))
        b = projected_adam(spec, OptimizerConfig(seed=9, epochs=100))
        np.testing.assert_array_equal(a.theta_hat, b.theta_hat)
        assert a.q_hat == b.q_hat
