"""Simulation designs: binary outcomes driven by one or two linear indexes.

Both designs draw covariates uniformly on a box and logistic errors, so the
centered regression function is available in closed form for oracle runs and
for grid-error checks of the nonparametric first stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import expit

from .exceptions import ConfigurationError

SINGLE_INDEX = "single_index"
TWO_INDEX = "two_index"
DESIGNS = (SINGLE_INDEX, TWO_INDEX)


def default_direction() -> np.ndarray:
    """Unit vector (1, -1, 1)/sqrt(3), the default true direction."""
    return np.array([1.0, -1.0, 1.0]) / np.sqrt(3.0)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) for a single integer seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def derive_seed(*parts: int) -> int:
    """Fold an ordered tuple of integers into one well-mixed 64-bit seed.

    Used to give each (master seed, replication, role) its own stream so runs
    are order-independent and replayable.
    """
    ss = np.random.SeedSequence([int(p) for p in parts])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class DgpSpec:
    """Configuration of one simulated design."""

    design: str
    n: int
    theta0: np.ndarray = field(default_factory=default_direction)
    d: int = 3
    covariate_low: float = -2.0
    covariate_high: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ConfigurationError(f"unknown design {self.design!r}")
        if self.n < 1:
            raise ConfigurationError("n must be a positive integer")
        theta0 = np.asarray(self.theta0, dtype=np.float64).ravel()
        if theta0.size != self.d:
            raise ConfigurationError(
                f"theta0 has length {theta0.size}, expected d={self.d}"
            )
        if abs(np.linalg.norm(theta0) - 1.0) > 1e-12:
            raise ConfigurationError("theta0 must have unit norm (within 1e-12)")
        if not self.covariate_low < self.covariate_high:
            raise ConfigurationError("covariate_low must be < covariate_high")
        theta0.setflags(write=False)
        object.__setattr__(self, "theta0", theta0)

    @property
    def n_index(self) -> int:
        return 1 if self.design == SINGLE_INDEX else 2

    @property
    def centering(self) -> float:
        return 0.5 if self.design == SINGLE_INDEX else 0.25

    def to_dict(self) -> dict:
        return {
            "design": self.design,
            "n": self.n,
            "theta0": [float(t) for t in self.theta0],
            "d": self.d,
            "covariate_low": self.covariate_low,
            "covariate_high": self.covariate_high,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DgpSpec":
        theta0 = data.get("theta0")
        theta0 = default_direction() if theta0 is None else np.asarray(theta0, float)
        return cls(
            design=data["design"],
            n=int(data["n"]),
            theta0=theta0,
            d=int(data.get("d", theta0.size)),
            covariate_low=float(data.get("covariate_low", -2.0)),
            covariate_high=float(data.get("covariate_high", 2.0)),
            seed=int(data.get("seed", 0)),
        )


@dataclass(frozen=True)
class Dataset:
    """A simulated (or external) sample.

    ``x`` has shape ``(n, J, d)``; ``y_centered`` is the outcome minus the
    design's centering constant.  ``covariate_low/high`` record the declared
    support when known (``None`` for external data, where first stages fall
    back to sample ranges).
    """

    x: np.ndarray
    y_centered: np.ndarray
    centering: float
    covariate_low: Union[float, None] = None
    covariate_high: Union[float, None] = None

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        y = np.ascontiguousarray(self.y_centered, dtype=np.float64)
        if x.ndim != 3 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ConfigurationError("x must be (n, J, d) with matching y length")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y_centered", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def n_index(self) -> int:
        return self.x.shape[1]

    @property
    def dim(self) -> int:
        return self.x.shape[2]

    @property
    def x_flat(self) -> np.ndarray:
        return self.x.reshape(self.n, self.n_index * self.dim)


def logistic_cdf(t):
    """Standard logistic CDF, 1/(1 + exp(-t)); satisfies F(t) + F(-t) = 1."""
    out = expit(t)
    return float(out) if np.isscalar(t) or np.ndim(t) == 0 else out


def _logistic_draws(rng: np.random.Generator, size) -> np.ndarray:
    # inverse-CDF transform; the uniform grid excludes both endpoints exactly
    u = rng.integers(1, 1 << 53, size=size).astype(np.float64) * 2.0**-53
    return np.log(u) - np.log1p(-u)


def gen_single_index(spec: DgpSpec) -> Dataset:
    """Binary outcome 1{x'theta0 > eps} with logistic errors, centered at 1/2."""
    if spec.design != SINGLE_INDEX:
        raise ConfigurationError("spec.design must be 'single_index'")
    rng = make_rng(spec.seed)
    x = rng.uniform(spec.covariate_low, spec.covariate_high, size=(spec.n, 1, spec.d))
    eps = _logistic_draws(rng, spec.n)
    y = (x[:, 0, :] @ spec.theta0 > eps).astype(np.float64)
    return Dataset(
        x=x,
        y_centered=y - 0.5,
        centering=0.5,
        covariate_low=spec.covariate_low,
        covariate_high=spec.covariate_high,
    )


def gen_two_index(spec: DgpSpec) -> Dataset:
    """Product of two index crossings with independent logistic errors.

    The outcome is 1{x1'theta0 > eps1} * 1{x2'theta0 > eps2}, centered at 1/4.
    """
    if spec.design != TWO_INDEX:
        raise ConfigurationError("spec.design must be 'two_index'")
    rng = make_rng(spec.seed)
    x = rng.uniform(spec.covariate_low, spec.covariate_high, size=(spec.n, 2, spec.d))
    eps = _logistic_draws(rng, (spec.n, 2))
    idx = x @ spec.theta0  # (n, 2)
    y = ((idx[:, 0] > eps[:, 0]) & (idx[:, 1] > eps[:, 1])).astype(np.float64)
    return Dataset(
        x=x,
        y_centered=y - 0.25,
        centering=0.25,
        covariate_low=spec.covariate_low,
        covariate_high=spec.covariate_high,
    )


def generate(spec: DgpSpec) -> Dataset:
    """Dispatch on ``spec.design``."""
    if spec.design == SINGLE_INDEX:
        return gen_single_index(spec)
    return gen_two_index(spec)


def true_h0(design: str, x, theta0) -> np.ndarray:
    """Closed-form centered regression function of either design.

    ``x`` is a single ``(J, d)`` block, a flat ``(d,)`` vector (single-index
    only), or a batch ``(m, J, d)``.  Returns a scalar for a single block.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    single = False
    if x.ndim == 1:
        x = x.reshape(1, 1, -1)
        single = True
    elif x.ndim == 2:
        x = x[None, :, :]
        single = True
    if x.shape[-1] != theta0.size:
        raise ConfigurationError("covariate block width does not match theta0")
    idx = x @ theta0  # (m, J)
    if design == SINGLE_INDEX:
        if x.shape[1] != 1:
            raise ConfigurationError("single-index blocks must have J=1")
        out = expit(idx[:, 0]) - 0.5
    elif design == TWO_INDEX:
        if x.shape[1] != 2:
            raise ConfigurationError("two-index blocks must have J=2")
        out = expit(idx[:, 0]) * expit(idx[:, 1]) - 0.25
    else:
        raise ConfigurationError(f"unknown design {design!r}")
    return float(out[0]) if single else out
