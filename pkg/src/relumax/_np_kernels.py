"""Pure-NumPy implementations of the numerical hot loops.

These mirror the compiled extension ``relumax._kernels`` and are selected by
:mod:`relumax.backend` when the extension is unavailable (or disabled via the
``RMS_PURE_PYTHON`` environment variable).  Signatures and semantics must stay
in lockstep with the extension; the parity tests compare both.

Conventions shared by both backends:

* covariate blocks ``x`` have shape ``(n, J, d)`` (float64, C-contiguous),
* ``h`` holds the per-observation regression values, shape ``(n,)``,
* directions ``theta`` are unit d-vectors,
* ReLU kinks use the right-derivative convention (derivative 0 at the kink),
* ties in the inner minimum resolve to the lowest index.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"

# kernel family codes shared with the compiled extension
FAMILY_GAUSSIAN = 0
FAMILY_EPANECHNIKOV = 1
FAMILY_GAUSSIAN_ORDER = 2

_NORM_CONST = 0.3989422804014327  # 1/sqrt(2*pi)
_DEGENERATE_FLOOR = 1e-300


def criterion_terms(x, h, theta):
    """Mean positive/negative sign-alignment scores over the sample.

    Returns ``(q_plus, q_minus)`` where the objective value is their sum.
    """
    idx = x @ theta  # (n, J)
    u = np.maximum(-idx, 0.0).min(axis=1)
    v = np.maximum(idx, 0.0).min(axis=1)
    q_plus = np.maximum(h - u, 0.0).mean()
    q_minus = np.maximum(-h - v, 0.0).mean()
    return float(q_plus), float(q_minus)


def criterion_subgrad(x, h, theta):
    """Scores plus an ascent subgradient of their sample mean.

    Returns ``(q_plus, q_minus, grad)`` with ``grad`` of shape ``(d,)``.
    At kink points the fixed selection is: outer and inner ReLU derivatives
    are 0 at 0, and the inner argmin takes the lowest index.
    """
    n = x.shape[0]
    idx = x @ theta
    neg = np.maximum(-idx, 0.0)
    pos = np.maximum(idx, 0.0)
    ju = neg.argmin(axis=1)  # argmin returns the first (lowest) index on ties
    jv = pos.argmin(axis=1)
    rows = np.arange(n)
    u = neg[rows, ju]
    v = pos[rows, jv]
    q_plus = np.maximum(h - u, 0.0).mean()
    q_minus = np.maximum(-h - v, 0.0).mean()
    act_p = (h > u) & (u > 0.0)
    act_m = (-h > v) & (v > 0.0)
    grad = np.zeros(x.shape[2])
    if act_p.any():
        grad += x[rows[act_p], ju[act_p]].sum(axis=0)
    if act_m.any():
        grad -= x[rows[act_m], jv[act_m]].sum(axis=0)
    grad /= n
    return float(q_plus), float(q_minus), grad


def _batch_subgrad(x, h, thetas):
    """Vectorized multi-start version of :func:`criterion_subgrad`.

    ``thetas`` has shape ``(S, d)``; returns ``(q (S,), grads (S, d))``.
    """
    n_starts = thetas.shape[0]
    n = x.shape[0]
    idx = np.einsum("njd,sd->snj", x, thetas)  # (S, n, J)
    neg = np.maximum(-idx, 0.0)
    pos = np.maximum(idx, 0.0)
    ju = neg.argmin(axis=2)
    jv = pos.argmin(axis=2)
    u = np.take_along_axis(neg, ju[:, :, None], axis=2)[:, :, 0]
    v = np.take_along_axis(pos, jv[:, :, None], axis=2)[:, :, 0]
    q = np.maximum(h - u, 0.0).mean(axis=1) + np.maximum(-h - v, 0.0).mean(axis=1)
    wp = ((h > u) & (u > 0.0)).astype(np.float64)
    wm = ((-h > v) & (v > 0.0)).astype(np.float64)
    xb = np.broadcast_to(x, (n_starts,) + x.shape)
    xu = np.take_along_axis(xb, ju[:, :, None, None], axis=2)[:, :, 0, :]
    xv = np.take_along_axis(xb, jv[:, :, None, None], axis=2)[:, :, 0, :]
    grads = (np.einsum("sn,snd->sd", wp, xu) - np.einsum("sn,snd->sd", wm, xv)) / n
    return q, grads


def adam_sphere_max(x, h, theta0, lr, epochs, beta1, beta2, eps, record_trace):
    """Multi-start ADAM ascent with renormalization onto the unit sphere.

    ``theta0`` has shape ``(S, d)``.  Returns ``(thetas, q_final, trace_q,
    trace_theta)``; the traces are ``None`` unless ``record_trace`` is true,
    otherwise they have shapes ``(S, epochs + 1)`` and ``(S, epochs + 1, d)``
    with row ``t`` holding the pre-update state at epoch ``t`` and the last
    row the final state.
    """
    thetas = np.array(theta0, dtype=np.float64, copy=True)
    n_starts, d = thetas.shape
    m = np.zeros((n_starts, d))
    v = np.zeros((n_starts, d))
    trace_q = np.empty((n_starts, epochs + 1)) if record_trace else None
    trace_theta = np.empty((n_starts, epochs + 1, d)) if record_trace else None
    p1 = 1.0
    p2 = 1.0
    for t in range(1, epochs + 1):
        q, g = _batch_subgrad(x, h, thetas)
        if record_trace:
            trace_q[:, t - 1] = q
            trace_theta[:, t - 1, :] = thetas
        p1 *= beta1
        p2 *= beta2
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        step = lr * (m / (1.0 - p1)) / (np.sqrt(v / (1.0 - p2)) + eps)
        thetas = thetas + step
        norms = np.linalg.norm(thetas, axis=1)
        thetas /= np.where(norms > 1e-12, norms, 1.0)[:, None]
    q_final, _ = _batch_subgrad(x, h, thetas)
    if record_trace:
        trace_q[:, epochs] = q_final
        trace_theta[:, epochs, :] = thetas
    return thetas, q_final, trace_q, trace_theta


def _univariate_kernel(z, family, order):
    if family == FAMILY_GAUSSIAN:
        return _NORM_CONST * np.exp(-0.5 * z * z)
    if family == FAMILY_EPANECHNIKOV:
        return np.where(np.abs(z) <= 1.0, 0.75 * (1.0 - z * z), 0.0)
    z2 = z * z
    base = _NORM_CONST * np.exp(-0.5 * z2)
    if order == 4:
        return 0.5 * (3.0 - z2) * base
    if order == 6:
        return 0.125 * (15.0 - 10.0 * z2 + z2 * z2) * base
    return base  # order 2 coincides with the plain Gaussian


def product_kernel(z, family, order):
    """Product kernel over the last axis of ``z``."""
    z = np.asarray(z, dtype=np.float64)
    if family == FAMILY_GAUSSIAN:
        p = z.shape[-1]
        return _NORM_CONST**p * np.exp(-0.5 * (z * z).sum(axis=-1))
    return np.prod(_univariate_kernel(z, family, order), axis=-1)


def nw_predict(x_train, y_train, x_query, bandwidth, family, order):
    """Locally weighted mean of ``y_train`` at each query point.

    Query points whose weight denominator underflows fall back to the global
    mean of ``y_train``; the second return value flags them.
    """
    n_query = x_query.shape[0]
    pred = np.empty(n_query)
    degenerate = np.zeros(n_query, dtype=bool)
    y_bar = float(y_train.mean()) if y_train.size else 0.0
    # chunk queries to bound the (chunk, n, p) scratch array
    chunk = max(1, int(4e6 // max(1, x_train.shape[0])))
    for lo in range(0, n_query, chunk):
        hi = min(lo + chunk, n_query)
        z = (x_query[lo:hi, None, :] - x_train[None, :, :]) / bandwidth
        w = product_kernel(z, family, order)
        den = w.sum(axis=1)
        num = w @ y_train
        bad = np.abs(den) < _DEGENERATE_FLOOR
        den = np.where(bad, 1.0, den)
        pred[lo:hi] = np.where(bad, y_bar, num / den)
        degenerate[lo:hi] = bad
    return pred, degenerate
