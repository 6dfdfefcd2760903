"""Maximization of the sample objective over the unit sphere.

Multi-start ADAM ascent with renormalization after every update; the start
with the highest final objective wins (ties break to the lowest index).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import backend
from .criterion import CriterionSpec, sample_criterion, criterion_subgradient
from .dgp import derive_seed, make_rng
from .exceptions import ConfigurationError, OptimizationError

InitSpec = Union[str, np.ndarray, Sequence[np.ndarray]]


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.01
    epochs: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    n_starts: int = 8
    init: InitSpec = "random"
    seed: int = 0
    tangent_projection: bool = False  # experimental alternative to plain renorm
    record_trace: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.n_starts < 1:
            raise ConfigurationError("n_starts must be >= 1")


@dataclass
class OptResult:
    theta_hat: np.ndarray
    q_hat: float
    start_index: int
    trace: Optional[list] = None  # [(epoch, q)] for the winning start
    start_q: Optional[np.ndarray] = None  # final objective per start
    start_traces: Optional[tuple] = None  # (trace_q (S,E+1), trace_theta (S,E+1,d))
    failures: list = field(default_factory=list)


def normalize(v) -> np.ndarray:
    """v / ||v||; rejects near-zero vectors."""
    v = np.asarray(v, dtype=np.float64).ravel()
    nrm = np.linalg.norm(v)
    if nrm <= 1e-12:
        raise ConfigurationError("cannot normalize a near-zero vector")
    return v / nrm


def _initial_directions(config: OptimizerConfig, dim: int) -> np.ndarray:
    init = config.init
    if isinstance(init, str):
        if init != "random":
            raise ConfigurationError(f"unknown init {init!r}")
        thetas = np.empty((config.n_starts, dim))
        for s in range(config.n_starts):
            rng = make_rng(derive_seed(config.seed, s))
            v = rng.standard_normal(dim)
            while np.linalg.norm(v) <= 1e-12:
                v = rng.standard_normal(dim)
            thetas[s] = v / np.linalg.norm(v)
        return thetas
    if isinstance(init, np.ndarray) and init.ndim == 1:
        return normalize(init)[None, :]
    return np.stack([normalize(t) for t in init])


def _tangent_adam(spec, config, theta0s):
    """ADAM on the gradient projected to the tangent space (diagnostic path)."""
    lr, b1, b2, eps = config.learning_rate, config.beta1, config.beta2, config.epsilon
    thetas = np.array(theta0s, copy=True)
    for s in range(thetas.shape[0]):
        theta = thetas[s]
        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        for t in range(1, config.epochs + 1):
            g = criterion_subgradient(spec, theta)
            g = g - (g @ theta) * theta
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            step = lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
            theta = theta + step
            theta /= np.linalg.norm(theta)
        thetas[s] = theta
    q = np.array([sample_criterion(spec, thetas[s]).value for s in range(len(thetas))])
    return thetas, q, None, None


def projected_adam(spec: CriterionSpec, config: OptimizerConfig) -> OptResult:
    """Best-of-n-starts ADAM ascent; deterministic given the config seed."""
    theta0s = _initial_directions(config, spec.dim)
    if config.tangent_projection:
        thetas, q_final, trace_q, trace_theta = _tangent_adam(spec, config, theta0s)
    else:
        thetas, q_final, trace_q, trace_theta = backend.adam_sphere_max(
            spec.x,
            spec.h_values,
            np.ascontiguousarray(theta0s),
            config.learning_rate,
            config.epochs,
            config.beta1,
            config.beta2,
            config.epsilon,
            config.record_trace,
        )
    finite = np.isfinite(q_final) & np.all(np.isfinite(thetas), axis=1)
    if not finite.any():
        raise OptimizationError(
            "every start produced non-finite values",
            traces=(trace_q, trace_theta),
        )
    ranked = np.where(finite, q_final, -np.inf)
    best = int(np.argmax(ranked))  # argmax takes the lowest index on ties
    # the last in-loop renormalization already left every iterate on the
    # sphere, so q_final[best] is the criterion at exactly this vector
    theta_hat = np.array(thetas[best], copy=True)
    trace = None
    if config.record_trace and trace_q is not None:
        trace = [(epoch, float(q)) for epoch, q in enumerate(trace_q[best])]
    return OptResult(
        theta_hat=theta_hat,
        q_hat=float(q_final[best]),
        start_index=best,
        trace=trace,
        start_q=np.asarray(q_final, dtype=np.float64),
        start_traces=(trace_q, trace_theta) if config.record_trace else None,
        failures=[int(s) for s in np.nonzero(~finite)[0]],
    )
