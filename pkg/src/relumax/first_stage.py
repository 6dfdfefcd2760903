"""First-stage nonparametric regressors for the centered outcome.

Three estimator families share one interface: locally weighted (product
smoothing kernels), tensor-product linear series, and a small ReLU network.
A polynomial-kernel ridge regressor is included as an optional alternative
configuration.  Fitted models are immutable; predictions are deterministic
and clamped to the admissible range of a centered probability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.interpolate import BSpline

from . import backend
from .dgp import Dataset, true_h0
from .exceptions import ConfigurationError
from .mlp import Mlp, MlpSpec

KERNEL_FAMILIES = {
    "gaussian": backend.FAMILY_GAUSSIAN,
    "epanechnikov": backend.FAMILY_EPANECHNIKOV,
    "gaussian_order": backend.FAMILY_GAUSSIAN_ORDER,
}
SUPPORTED_ORDERS = (2, 4, 6)

BASIS_LEGENDRE = "legendre"
BASIS_CUBIC_SPLINE = "cubic_spline"


@dataclass(frozen=True)
class KernelSpec:
    """Product smoothing kernel and bandwidth (explicit or by rule).

    With no explicit bandwidth, ``b = c * n**(-exponent)`` where the rule
    defaults to ``(1.0, 1/(2*order + 1))``; ``undersmooth`` multiplies the
    exponent by 1.1.
    """

    family: str = "gaussian"
    order: int = 2
    bandwidth: Optional[float] = None
    bandwidth_rule: Optional[Tuple[float, float]] = None
    undersmooth: bool = False

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ConfigurationError(f"unknown kernel family {self.family!r}")
        if self.order % 2 != 0 or self.order < 2:
            raise ConfigurationError("kernel order must be even and >= 2")
        if self.order not in SUPPORTED_ORDERS:
            raise ConfigurationError(f"kernel order must be one of {SUPPORTED_ORDERS}")
        if self.family == "epanechnikov" and self.order != 2:
            raise ConfigurationError("epanechnikov kernel has order 2")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ConfigurationError("bandwidth must be positive")

    def resolve_bandwidth(self, n: int) -> float:
        if self.bandwidth is not None:
            return float(self.bandwidth)
        if self.bandwidth_rule is not None:
            c, exponent = self.bandwidth_rule
        else:
            # default constant tuned on the simulated designs (covariates on
            # a +-2 box); the exponent is the rate-optimal one for the order
            c, exponent = 2.0, 1.0 / (2 * self.order + 1)
        if self.undersmooth:
            exponent *= 1.1
        b = float(c) * float(n) ** (-float(exponent))
        if b <= 0:
            raise ConfigurationError("resolved bandwidth must be positive")
        return b

    @property
    def family_code(self) -> int:
        return KERNEL_FAMILIES[self.family]


@dataclass(frozen=True)
class SeriesSpec:
    """Tensor-product linear series on covariates rescaled to [-1, 1]."""

    univariate_basis: str = BASIS_LEGENDRE
    per_dim_degree: int = 4

    def __post_init__(self):
        if self.univariate_basis not in (BASIS_LEGENDRE, BASIS_CUBIC_SPLINE):
            raise ConfigurationError(
                f"unknown basis {self.univariate_basis!r}"
            )
        if self.per_dim_degree < 1:
            raise ConfigurationError("per_dim_degree must be >= 1")
        if self.univariate_basis == BASIS_CUBIC_SPLINE and self.per_dim_degree < 4:
            raise ConfigurationError("cubic splines need per_dim_degree >= 4")


@dataclass(frozen=True)
class KernelRidgeSpec:
    """Polynomial-kernel ridge regression, (gamma * <x, x'> + 1)**degree."""

    alpha: float = 0.1
    gamma: float = 0.0001
    degree: int = 2

    def __post_init__(self):
        if self.alpha <= 0 or self.gamma <= 0 or self.degree < 1:
            raise ConfigurationError("alpha, gamma must be > 0 and degree >= 1")


class FittedRegressor:
    """Frozen first-stage model; ``predict`` clamps to [-c, 1-c]."""

    kind = "base"

    def __init__(self, in_dim: int, centering: float):
        self.in_dim = in_dim
        self.clamp = (-float(centering), 1.0 - float(centering))

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.in_dim:
            raise ConfigurationError(
                f"query has {x.shape[1]} columns, model expects {self.in_dim}"
            )
        return np.ascontiguousarray(x), single

    def predict(self, x):
        x2, single = self._check(x)
        out = np.clip(self._predict(x2), self.clamp[0], self.clamp[1])
        return float(out[0]) if single else out

    def _predict(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class KernelRegressor(FittedRegressor):
    kind = "kernel"

    def __init__(self, x_train, y_train, bandwidth, spec: KernelSpec, centering):
        super().__init__(x_train.shape[1], centering)
        self.x_train = np.ascontiguousarray(x_train, dtype=np.float64)
        self.y_train = np.ascontiguousarray(y_train, dtype=np.float64)
        self.bandwidth = float(bandwidth)
        self.spec = spec

    def predict_with_flags(self, x):
        """Predictions plus a mask of queries that fell back to the mean."""
        x2, single = self._check(x)
        pred, degen = backend.nw_predict(
            self.x_train,
            self.y_train,
            x2,
            self.bandwidth,
            self.spec.family_code,
            self.spec.order,
        )
        pred = np.clip(pred, self.clamp[0], self.clamp[1])
        if single:
            return float(pred[0]), bool(degen[0])
        return pred, degen

    def _predict(self, x):
        pred, _ = backend.nw_predict(
            self.x_train,
            self.y_train,
            x,
            self.bandwidth,
            self.spec.family_code,
            self.spec.order,
        )
        return pred


class SeriesRegressor(FittedRegressor):
    kind = "series"

    def __init__(self, spec, lows, highs, coefficients, centering):
        super().__init__(len(lows), centering)
        self.spec = spec
        self.lows = lows
        self.highs = highs
        self.coefficients = coefficients

    def _predict(self, x):
        return _series_design(x, self.spec, self.lows, self.highs) @ self.coefficients


class MlpRegressor(FittedRegressor):
    kind = "mlp"

    def __init__(self, net: Mlp, centering, losses):
        super().__init__(net.in_dim, centering)
        self.net = net
        self.losses = losses

    def _predict(self, x):
        return self.net.predict(x)


class KernelRidgeRegressor(FittedRegressor):
    kind = "kernel_ridge"

    def __init__(self, x_train, dual_coef, spec: KernelRidgeSpec, centering):
        super().__init__(x_train.shape[1], centering)
        self.x_train = x_train
        self.dual_coef = dual_coef
        self.spec = spec

    def _predict(self, x):
        gram = (self.spec.gamma * (x @ self.x_train.T) + 1.0) ** self.spec.degree
        return gram @ self.dual_coef


class OracleRegressor(FittedRegressor):
    """Closed-form regression function of a simulated design (no fitting)."""

    kind = "oracle"

    def __init__(self, design, theta0, n_index, dim):
        centering = 0.5 if n_index == 1 else 0.25
        super().__init__(n_index * dim, centering)
        self.design = design
        self.theta0 = np.asarray(theta0, dtype=np.float64)
        self.n_index = n_index
        self.dim = dim

    def _predict(self, x):
        blocks = x.reshape(x.shape[0], self.n_index, self.dim)
        return true_h0(self.design, blocks, self.theta0)


def fit_kernel(data: Dataset, spec: KernelSpec) -> KernelRegressor:
    """Locally weighted regression of the centered outcome on flat covariates."""
    bandwidth = spec.resolve_bandwidth(data.n)
    return KernelRegressor(data.x_flat, data.y_centered, bandwidth, spec, data.centering)


def _rescale_bounds(data: Dataset):
    x = data.x_flat
    if data.covariate_low is not None and data.covariate_high is not None:
        lows = np.full(x.shape[1], float(data.covariate_low))
        highs = np.full(x.shape[1], float(data.covariate_high))
    else:
        lows = x.min(axis=0)
        highs = x.max(axis=0)
    if np.any(highs <= lows):
        raise ConfigurationError("degenerate covariate range for series rescaling")
    return lows, highs


def _univariate_basis(z: np.ndarray, spec: SeriesSpec) -> np.ndarray:
    j_n = spec.per_dim_degree
    if spec.univariate_basis == BASIS_LEGENDRE:
        return np.polynomial.legendre.legvander(z, j_n - 1)
    # clamped uniform cubic B-spline basis with j_n functions on [-1, 1]
    n_interior = j_n - 4
    knots = np.concatenate(
        [[-1.0] * 4, np.linspace(-1.0, 1.0, n_interior + 2)[1:-1], [1.0] * 4]
    )
    z = np.clip(z, -1.0, 1.0)
    return BSpline.design_matrix(z, knots, 3).toarray()


def _series_design(x, spec: SeriesSpec, lows, highs) -> np.ndarray:
    z = 2.0 * (x - lows) / (highs - lows) - 1.0
    design = np.ones((x.shape[0], 1))
    for k in range(x.shape[1]):
        basis_k = _univariate_basis(z[:, k], spec)
        design = (design[:, :, None] * basis_k[:, None, :]).reshape(x.shape[0], -1)
    return design


def fit_series(data: Dataset, spec: SeriesSpec) -> SeriesRegressor:
    """Least squares on a tensor-product basis via SVD (rank-revealing)."""
    lows, highs = _rescale_bounds(data)
    design = _series_design(data.x_flat, spec, lows, highs)
    k_n = design.shape[1]
    if k_n >= data.n:
        raise ConfigurationError(
            f"series dimension {k_n} must be < sample size {data.n}"
        )
    coef, _, rank, _ = np.linalg.lstsq(design, data.y_centered, rcond=None)
    if rank < k_n:
        raise ConfigurationError(
            f"series design matrix is rank-deficient: {k_n - rank} of {k_n} "
            "columns are redundant on the training sample"
        )
    return SeriesRegressor(spec, lows, highs, coef, data.centering)


def fit_mlp(data: Dataset, spec: MlpSpec) -> MlpRegressor:
    """ReLU network trained by ADAM on squared error against y_centered."""
    net = Mlp(data.x_flat.shape[1], spec)
    losses = net.train(data.x_flat, data.y_centered)
    return MlpRegressor(net, data.centering, losses)


def fit_kernel_ridge(data: Dataset, spec: KernelRidgeSpec) -> KernelRidgeRegressor:
    """Ridge regression in the polynomial-kernel feature space."""
    x = data.x_flat
    gram = (spec.gamma * (x @ x.T) + 1.0) ** spec.degree
    gram[np.diag_indices_from(gram)] += spec.alpha
    dual = np.linalg.solve(gram, data.y_centered)
    return KernelRidgeRegressor(x, dual, spec, data.centering)


def oracle_regressor(design, theta0, n_index, dim) -> OracleRegressor:
    return OracleRegressor(design, theta0, n_index, dim)


def predict(model: FittedRegressor, x):
    """Module-level alias for ``model.predict``."""
    return model.predict(x)
