"""Joint estimation: a ReLU regression head composed with the
sign-alignment layer, trained end to end.

The layer reuses the criterion's score formulas so the two code paths agree
exactly; its backward pass applies the same kink conventions as the
criterion subgradient.  Training runs in three stages: (1) the network alone
against the centered outcome with the alignment layer bypassed, (2) the
direction alone by sphere-projected ascent of the alignment criterion with
the head frozen (the squared-error objective is too flat in the direction
to pin it down), (3) everything jointly on squared error, with the
direction renormalized after every step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .criterion import CriterionSpec, score_plus, score_minus
from .dgp import Dataset, derive_seed
from .exceptions import ConfigurationError, TrainingError
from .mlp import AdamState, Mlp, MlpSpec
from .optimizer import OptimizerConfig, projected_adam


@dataclass(frozen=True)
class JointTrainConfig:
    stage1_epochs: int = 100
    stage2_epochs: int = 500
    stage3_epochs: int = 100
    stage1_lr: float = 0.01
    stage2_lr: float = 0.01
    stage3_lr: float = 0.002
    stage2_starts: int = 8
    seed: int = 0

    def __post_init__(self):
        for name in ("stage1_epochs", "stage2_epochs", "stage3_epochs"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        for name in ("stage1_lr", "stage2_lr", "stage3_lr"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.stage2_starts < 1:
            raise ConfigurationError("stage2_starts must be >= 1")


def rms_layer_forward(h_val, x_block, theta):
    """Scores (g_plus, g_minus) for one observation; same math as the criterion."""
    return (
        score_plus(theta, h_val, x_block),
        score_minus(theta, h_val, x_block),
    )


def rms_layer_backward(h_val, x_block, theta, upstream_plus, upstream_minus):
    """Chain-rule gradients of the two scores w.r.t. (h_val, theta).

    Uses the criterion's kink conventions: ReLU derivative 0 at the kink and
    lowest-index argmin for ties of the inner minimum.  Returns
    ``(d_h, d_theta)`` for the weighted sum
    ``upstream_plus * g_plus + upstream_minus * g_minus``.
    """
    x_block = np.atleast_2d(np.asarray(x_block, dtype=np.float64))
    theta = np.asarray(theta, dtype=np.float64)
    idx = x_block @ theta
    neg = np.maximum(-idx, 0.0)
    pos = np.maximum(idx, 0.0)
    ju = int(neg.argmin())
    jv = int(pos.argmin())
    u = neg[ju]
    v = pos[jv]
    d_h = 0.0
    d_theta = np.zeros_like(theta)
    if h_val - u > 0.0:
        d_h += upstream_plus
        if u > 0.0:
            d_theta += upstream_plus * x_block[ju]
    if -h_val - v > 0.0:
        d_h -= upstream_minus
        if v > 0.0:
            d_theta -= upstream_minus * x_block[jv]
    return d_h, d_theta


def _layer_forward_batch(h_vals, x, theta):
    """Vectorized layer pass; returns (g_plus, g_minus, caches)."""
    idx = x @ theta  # (n, J)
    neg = np.maximum(-idx, 0.0)
    pos = np.maximum(idx, 0.0)
    ju = neg.argmin(axis=1)
    jv = pos.argmin(axis=1)
    rows = np.arange(x.shape[0])
    u = neg[rows, ju]
    v = pos[rows, jv]
    g_plus = np.maximum(h_vals - u, 0.0)
    g_minus = np.maximum(-h_vals - v, 0.0)
    return g_plus, g_minus, (ju, jv, u, v)


def _layer_backward_batch(h_vals, x, cache, up_plus, up_minus):
    """Batch gradients of sum_i(up_plus_i g_plus_i + up_minus_i g_minus_i)."""
    ju, jv, u, v = cache
    rows = np.arange(x.shape[0])
    act_p = h_vals - u > 0.0
    act_m = -h_vals - v > 0.0
    d_h = np.where(act_p, up_plus, 0.0) - np.where(act_m, up_minus, 0.0)
    wp = np.where(act_p & (u > 0.0), up_plus, 0.0)
    wm = np.where(act_m & (v > 0.0), up_minus, 0.0)
    d_theta = wp @ x[rows, ju] - wm @ x[rows, jv]
    return d_h, d_theta


class RmsNetwork:
    """ReLU regression head plus alignment layer; output g_plus - g_minus."""

    def __init__(self, n_index: int, dim: int, mlp_spec: MlpSpec, theta=None):
        self.n_index = n_index
        self.dim = dim
        self.mlp = Mlp(n_index * dim, mlp_spec)
        if theta is None:
            theta = np.zeros(dim)
            theta[0] = 1.0
        theta = np.asarray(theta, dtype=np.float64)
        self.theta = theta / np.linalg.norm(theta)

    def head_values(self, x3d: np.ndarray) -> np.ndarray:
        return self.mlp.predict(x3d.reshape(x3d.shape[0], -1))

    def forward(self, x3d: np.ndarray) -> np.ndarray:
        """Network output h_{theta,beta}(x) = g_plus - g_minus, shape (n,)."""
        h_vals = self.head_values(x3d)
        g_plus, g_minus, _ = _layer_forward_batch(h_vals, x3d, self.theta)
        return g_plus - g_minus


def _check_loss(loss, stage, epoch):
    if not np.isfinite(loss):
        raise TrainingError(
            f"non-finite loss {loss} in {stage} at epoch {epoch}",
            stage=stage,
            epoch=epoch,
            loss=loss,
        )


def joint_fit(data: Dataset, net: RmsNetwork, config: JointTrainConfig):
    """Three-stage training; returns (theta_hat, net) with theta_hat unit."""
    if data.n_index != net.n_index or data.dim != net.dim:
        raise ConfigurationError("network block shape does not match the data")
    x3d = data.x
    x_flat = data.x_flat
    y = data.y_centered
    n = data.n

    # stage 1: function approximation only; the alignment layer is bypassed
    # (its zero-direction limit is the identity on h), so the head trains
    # directly against the centered outcome.
    net.mlp.train(
        x_flat, y, stage="stage1", lr=config.stage1_lr, epochs=config.stage1_epochs
    )

    # stage 2: direction only, head frozen; fresh sphere starts, ascent of
    # the alignment criterion with the trained head as the h evaluator
    spec = CriterionSpec(data, net.head_values(x3d))
    result = projected_adam(
        spec,
        OptimizerConfig(
            learning_rate=config.stage2_lr,
            epochs=config.stage2_epochs,
            n_starts=config.stage2_starts,
            seed=derive_seed(config.seed, 2),
        ),
    )
    net.theta = np.array(result.theta_hat, copy=True)

    # stage 3: everything jointly
    params = net.mlp.parameters() + [net.theta]
    opt_all = AdamState([p.shape for p in params], config.stage3_lr)
    for epoch in range(config.stage3_epochs):
        h_vals, mlp_cache = net.mlp.forward(x_flat)
        g_plus, g_minus, cache = _layer_forward_batch(h_vals, x3d, net.theta)
        resid = (g_plus - g_minus) - y
        _check_loss(float(np.mean(resid**2)), "stage3", epoch)
        dout = 2.0 * resid / n
        d_h, d_theta = _layer_backward_batch(h_vals, x3d, cache, dout, -dout)
        grads = net.mlp.backward(mlp_cache, d_h) + [d_theta]
        opt_all.step(params, grads)
        net.theta /= np.linalg.norm(net.theta)

    return np.array(net.theta, copy=True), net
