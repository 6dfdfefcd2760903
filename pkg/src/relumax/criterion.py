"""Sample objective for direction estimation.

For each observation the objective adds two composite-ReLU scores: the
positive part of h minus the smallest rectified negative index, and the
mirrored negative part.  Their sample mean is maximized over unit vectors;
an exact almost-everywhere subgradient is available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .dgp import Dataset
from .exceptions import ConfigurationError


def relu(t):
    """max(t, 0), elementwise on arrays."""
    if np.isscalar(t) or np.ndim(t) == 0:
        return t if t > 0.0 else 0.0 * t
    return np.maximum(t, 0.0)


def score_plus(theta, h_val, x_block):
    """[h - min_j relu(-x_j . theta)]_+ for one (J, d) covariate block."""
    x_block = np.atleast_2d(np.asarray(x_block, dtype=np.float64))
    inner = np.min(np.maximum(-(x_block @ np.asarray(theta, float)), 0.0))
    return relu(h_val - inner)


def score_minus(theta, h_val, x_block):
    """[-h - min_j relu(x_j . theta)]_+, the sign-flipped mirror score."""
    x_block = np.atleast_2d(np.asarray(x_block, dtype=np.float64))
    inner = np.min(np.maximum(x_block @ np.asarray(theta, float), 0.0))
    return relu(-h_val - inner)


@dataclass(frozen=True)
class CriterionValue:
    value: float
    plus: float
    minus: float


class CriterionSpec:
    """Binds a dataset and an h evaluator; caches h at the sample points.

    ``h`` may be a fitted regressor (anything with ``predict``), a callable
    on flat covariate rows, or a precomputed vector of per-observation
    values.  The cached values are what every criterion evaluation uses, so
    optimizing over directions never re-queries the first stage.
    """

    def __init__(self, data: Dataset, h, n_index=None, dim=None):
        if n_index is not None and n_index != data.n_index:
            raise ConfigurationError("n_index does not match the dataset blocks")
        if dim is not None and dim != data.dim:
            raise ConfigurationError("dim does not match the dataset blocks")
        self.data = data
        self.h = h
        self.n_index = data.n_index
        self.dim = data.dim
        self.x = np.ascontiguousarray(data.x, dtype=np.float64)
        if callable(getattr(h, "predict", None)):
            vals = h.predict(data.x_flat)
        elif callable(h):
            vals = h(data.x_flat)
        else:
            vals = h
        vals = np.ascontiguousarray(vals, dtype=np.float64).ravel()
        if vals.shape[0] != data.n:
            raise ConfigurationError("h produced a value count != sample size")
        self.h_values = vals

    def max_attainable(self) -> float:
        """(1/n) sum |h_i|, the ceiling of the criterion over directions."""
        return float(np.mean(np.abs(self.h_values)))


def _check_theta(spec: CriterionSpec, theta) -> np.ndarray:
    theta = np.ascontiguousarray(theta, dtype=np.float64).ravel()
    if theta.shape[0] != spec.dim:
        raise ConfigurationError(
            f"theta has length {theta.shape[0]}, expected {spec.dim}"
        )
    return theta


def sample_criterion(spec: CriterionSpec, theta) -> CriterionValue:
    """Mean of both scores over the sample, components reported separately."""
    theta = _check_theta(spec, theta)
    q_plus, q_minus = backend.criterion_terms(spec.x, spec.h_values, theta)
    return CriterionValue(value=q_plus + q_minus, plus=q_plus, minus=q_minus)


def criterion_subgradient(spec: CriterionSpec, theta) -> np.ndarray:
    """Ascent subgradient of the sample objective at ``theta``.

    Wherever every ReLU argument is strictly away from its kink and the
    inner minimum is uniquely attained this is the exact gradient; at kinks
    it uses the fixed selection (zero derivative at the kink, lowest-index
    argmin).
    """
    theta = _check_theta(spec, theta)
    _, _, grad = backend.criterion_subgrad(spec.x, spec.h_values, theta)
    return grad
