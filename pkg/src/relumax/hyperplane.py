"""Integrals over hyperplane slices of a box support.

Provides the surface quantities that drive the estimator's asymptotics for
the simulated designs: the curvature (Hessian-type) matrix of the population
objective, the first-stage influence variance matrix, the univariate profile
of a multivariate kernel on a slice, and a generic linear slice functional.

Geometry: for a unit direction ``theta`` the slice ``{x : x . theta = t}`` is
parameterized through an orthonormal frame whose first column is ``theta``.
In those coordinates the slice integral is an ordinary Lebesgue integral over
the remaining coordinates, which is what the quadrature below evaluates.

Quadrature strategy: the innermost complement coordinate is integrated over
its exact admissible interval (the box constraints are linear, so the
interval is available in closed form), and for 3-dimensional ambient spaces
the outer coordinate is additionally split at the points where the active
constraint changes, making every piece smooth.  Polynomial integrands over a
box slice are then integrated exactly.  Higher-dimensional problems fall
back to Monte Carlo directly on the slice.  An independent slab-sampling
Monte Carlo oracle is included as ground truth for tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._np_kernels import product_kernel
from .dgp import DgpSpec, SINGLE_INDEX, make_rng, true_h0
from .exceptions import ConfigurationError
from .first_stage import KernelSpec

LOGISTIC_DENSITY_AT_ZERO = 0.25

_EPS_COEF = 1e-13


@dataclass(frozen=True)
class CoordFrame:
    """Orthonormal frame whose first column is the slice normal."""

    theta: np.ndarray
    matrix: np.ndarray  # (d, d); columns: theta, then the complement


def orthonormal_complement(theta) -> CoordFrame:
    """Householder completion of ``theta`` to an orthonormal basis.

    Deterministic; maps the first canonical vector to ``theta``, so
    ``theta = e1`` yields the identity.
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if abs(np.linalg.norm(theta) - 1.0) > 1e-10:
        raise ConfigurationError("slice normal must be a unit vector")
    d = theta.size
    v = theta.copy()
    v[0] -= 1.0
    vv = v @ v
    if vv < 1e-28:
        return CoordFrame(theta=theta, matrix=np.eye(d))
    mat = np.eye(d) - 2.0 * np.outer(v, v) / vv
    return CoordFrame(theta=theta, matrix=mat)


def _column_range(col, low, high):
    """Exact range of x . col over the box [low, high]^d."""
    lo = np.minimum(low * col, high * col).sum()
    hi = np.maximum(low * col, high * col).sum()
    return lo, hi


def _inner_interval(a, b, lo3, hi3, low, high):
    """Admissible innermost-coordinate interval at one outer point.

    Constraints are ``low <= a_k + w * b_k <= high`` per box coordinate k,
    where ``w`` is the innermost slice coordinate; ``a`` already includes the
    contribution of every fixed coordinate.  Returns (lo, hi) or None.
    """
    lo, hi = lo3, hi3
    for ak, bk in zip(a, b):
        if abs(bk) < _EPS_COEF:
            if ak < low - 1e-12 or ak > high + 1e-12:
                return None
            continue
        left = (low - ak) / bk
        right = (high - ak) / bk
        if bk < 0.0:
            left, right = right, left
        if left > lo:
            lo = left
        if right < hi:
            hi = right
    if hi - lo <= 1e-14:
        return None
    return lo, hi


def _gauss_nodes(nodes, a, b):
    z, w = np.polynomial.legendre.leggauss(nodes)
    half = 0.5 * (b - a)
    return a + half * (z + 1.0), half * w


def _accumulate(total, weights, values):
    contrib = np.tensordot(weights, np.asarray(values, dtype=np.float64), axes=(0, 0))
    return contrib if total is None else total + contrib


def _quad_slice_2d(m, frame, t, low, high, nodes):
    # ambient dimension 2: the slice is a segment; integrate over it exactly
    theta, mat = frame.theta, frame.matrix
    c1 = mat[:, 1]
    base = t * theta
    lo0, hi0 = _column_range(c1, low, high)
    interval = _inner_interval(base, c1, lo0, hi0, low, high)
    if interval is None:
        return 0.0
    u, w = _gauss_nodes(nodes, *interval)
    pts = base[None, :] + u[:, None] * c1[None, :]
    return np.tensordot(w, np.asarray(m(pts), dtype=np.float64), axes=(0, 0))


def _outer_breakpoints(base, b2, b3, low, high, lo2, hi2):
    """Outer-coordinate values where the active innermost constraint changes.

    Each box face gives a line ``a_k + u2 b2_k + u3 b3_k = bound``; crossings
    of two such lines (in u3) and points where a u3-free constraint touches a
    bound are the only places the clipped interval is non-smooth in u2.
    """
    lines = []  # (slope, intercept) of u3 = s * u2 + c, plus vertical events
    points = []
    for k in range(base.size):
        for bound in (low, high):
            if abs(b3[k]) >= _EPS_COEF:
                lines.append(((bound - base[k]) / b3[k], -b2[k] / b3[k]))
            elif abs(b2[k]) >= _EPS_COEF:
                points.append((bound - base[k]) / b2[k])
    for i in range(len(lines)):
        ci, si = lines[i]
        for j in range(i + 1, len(lines)):
            cj, sj = lines[j]
            if abs(si - sj) >= _EPS_COEF:
                points.append((cj - ci) / (si - sj))
    points = [p for p in points if lo2 < p < hi2]
    return sorted(set(points))


def _quad_slice_3d(m, frame, t, low, high, nodes):
    theta, mat = frame.theta, frame.matrix
    c2, c3 = mat[:, 1], mat[:, 2]
    base = t * theta
    lo2, hi2 = _column_range(c2, low, high)
    lo3, hi3 = _column_range(c3, low, high)
    cuts = [lo2] + _outer_breakpoints(base, c2, c3, low, high, lo2, hi2) + [hi2]
    z_ref, w_ref = np.polynomial.legendre.leggauss(nodes)
    total = None
    for seg_lo, seg_hi in zip(cuts[:-1], cuts[1:]):
        if seg_hi - seg_lo <= 1e-13:
            continue
        u2, w2 = _gauss_nodes(nodes, seg_lo, seg_hi)
        lo_in = np.empty(nodes)
        hi_in = np.empty(nodes)
        feasible = np.zeros(nodes, dtype=bool)
        for i, u2k in enumerate(u2):
            interval = _inner_interval(base + u2k * c2, c3, lo3, hi3, low, high)
            if interval is not None:
                lo_in[i], hi_in[i] = interval
                feasible[i] = True
        if not feasible.any():
            continue
        u2 = u2[feasible]
        w2 = w2[feasible]
        half = 0.5 * (hi_in[feasible] - lo_in[feasible])
        u3 = lo_in[feasible, None] + half[:, None] * (z_ref[None, :] + 1.0)
        w3 = half[:, None] * w_ref[None, :]
        pts = (
            base[None, None, :]
            + u2[:, None, None] * c2[None, None, :]
            + u3[:, :, None] * c3[None, None, :]
        )
        weights = (w2[:, None] * w3).ravel()
        total = _accumulate(total, weights, m(pts.reshape(-1, theta.size)))
    return 0.0 if total is None else total


def _quad_slice_nd(m, frame, t, low, high, nodes):
    # generic iterated scheme: tensor grid on the outer complement
    # coordinates (box indicator applied), exact interval on the innermost
    theta, mat = frame.theta, frame.matrix
    d = theta.size
    outer_cols = [mat[:, k] for k in range(1, d - 1)]
    inner = mat[:, d - 1]
    base = t * theta
    grids = []
    for col in outer_cols:
        lo, hi = _column_range(col, low, high)
        grids.append(_gauss_nodes(nodes, lo, hi))
    lo_in, hi_in = _column_range(inner, low, high)
    mesh = np.meshgrid(*[g[0] for g in grids], indexing="ij")
    wmesh = np.meshgrid(*[g[1] for g in grids], indexing="ij")
    coords = np.stack([g.ravel() for g in mesh], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in wmesh], axis=1), axis=1)
    total = None
    for point, w_out in zip(coords, weights):
        a = base + sum(uk * col for uk, col in zip(point, outer_cols))
        interval = _inner_interval(a, inner, lo_in, hi_in, low, high)
        if interval is None:
            continue
        u, w = _gauss_nodes(nodes, *interval)
        pts = a[None, :] + u[:, None] * inner[None, :]
        total = _accumulate(total, w_out * w, m(pts))
    return 0.0 if total is None else total


def _mc_slice(m, frame, t, low, high, draws, seed):
    """Monte Carlo directly on the slice: uniform complement coordinates."""
    theta, mat = frame.theta, frame.matrix
    d = theta.size
    cols = mat[:, 1:]
    ranges = np.array([_column_range(cols[:, k], low, high) for k in range(d - 1)])
    widths = ranges[:, 1] - ranges[:, 0]
    volume = float(np.prod(widths))
    rng = make_rng(seed)
    base = t * theta
    total = None
    count = 0
    chunk = 200_000
    remaining = draws
    while remaining > 0:
        b = min(chunk, remaining)
        remaining -= b
        u = ranges[:, 0] + rng.random((b, d - 1)) * widths
        pts = base[None, :] + u @ cols.T
        inside = np.all((pts >= low) & (pts <= high), axis=1)
        vals = np.asarray(m(pts), dtype=np.float64)
        vals = vals * inside.reshape((b,) + (1,) * (vals.ndim - 1))
        total = vals.sum(axis=0) if total is None else total + vals.sum(axis=0)
        count += b
    return total / count * volume


def hausdorff_integral(
    m: Callable[[np.ndarray], np.ndarray],
    theta,
    t: float,
    low: float,
    high: float,
    *,
    nodes: int = 64,
    mc_draws: Optional[int] = None,
    seed: int = 0,
):
    """Integral of ``m`` over the slice ``{x : x . theta = t}`` of a box.

    ``m`` must accept a batch of points, shape ``(B, d)``, and return one
    value (scalar or array) per point; array-valued integrands integrate
    componentwise.  Ambient dimensions up to 4 use nested Gauss-Legendre
    quadrature with exact box clipping; beyond that (or when ``mc_draws`` is
    given) an on-slice Monte Carlo estimate is used.
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if not low < high:
        raise ConfigurationError("box bounds must satisfy low < high")
    frame = orthonormal_complement(theta)
    d = theta.size
    if mc_draws is not None or d > 4:
        draws = mc_draws if mc_draws is not None else 2_000_000
        result = _mc_slice(m, frame, float(t), low, high, draws, seed)
    elif d == 2:
        result = _quad_slice_2d(m, frame, float(t), low, high, nodes)
    elif d == 3:
        result = _quad_slice_3d(m, frame, float(t), low, high, nodes)
    else:
        result = _quad_slice_nd(m, frame, float(t), low, high, nodes)
    if np.ndim(result) == 0:
        return float(result)
    return np.asarray(result)


def slab_monte_carlo(
    m,
    theta,
    t: float,
    low: float,
    high: float,
    *,
    draws: int = 10_000_000,
    half_width: float = 1e-3,
    seed: int = 0,
):
    """Brute-force slab estimate of a slice integral, with standard errors.

    Samples the box uniformly and keeps points with ``|x . theta - t|``
    below ``half_width``; the slice integral is the slab average rescaled by
    box volume over slab thickness.  Returns ``(estimate, standard_error)``,
    both componentwise for array-valued ``m``.  Entirely independent of the
    quadrature path, so it serves as ground truth in tests.
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    d = theta.size
    volume = (high - low) ** d
    scale = volume / (2.0 * half_width)
    rng = make_rng(seed)
    total = None
    total_sq = None
    count = 0
    chunk = 500_000
    remaining = draws
    while remaining > 0:
        b = min(chunk, remaining)
        remaining -= b
        x = rng.uniform(low, high, size=(b, d))
        in_slab = np.abs(x @ theta - t) < half_width
        vals = np.asarray(m(x), dtype=np.float64)
        vals = vals * in_slab.reshape((b,) + (1,) * (vals.ndim - 1)) * scale
        total = vals.sum(axis=0) if total is None else total + vals.sum(axis=0)
        sq = vals * vals
        total_sq = sq.sum(axis=0) if total_sq is None else total_sq + sq.sum(axis=0)
        count += b
    mean = total / count
    var = (total_sq - count * mean * mean) / (count - 1)
    se = np.sqrt(np.maximum(var, 0.0) / count)
    if np.ndim(mean) == 0:
        return float(mean), float(se)
    return np.asarray(mean), np.asarray(se)


# ---------------------------------------------------------------------------
# surface quantities for the simulated designs


def _require_single_index(spec: DgpSpec):
    if spec.design != SINGLE_INDEX:
        raise ConfigurationError(
            "closed-form surface weights are implemented for the single-index "
            "design; supply explicit per-index integrands otherwise"
        )


def curvature_matrix(spec: DgpSpec, *, nodes: int = 64) -> np.ndarray:
    """Curvature matrix of the population objective at the true direction.

    For the logistic single-index design the weight is constant,
    f(0)/(f(0)+1) with f(0) = 1/4, times x x' and the uniform covariate
    density, integrated over the slice through the origin.
    """
    _require_single_index(spec)
    f0 = LOGISTIC_DENSITY_AT_ZERO
    weight = f0 / (f0 + 1.0)
    density = (spec.covariate_high - spec.covariate_low) ** (-spec.d)

    def integrand(pts):
        return weight * density * np.einsum("bi,bj->bij", pts, pts)

    v = hausdorff_integral(
        integrand, spec.theta0, 0.0, spec.covariate_low, spec.covariate_high,
        nodes=nodes,
    )
    return 0.5 * (v + v.T)


def conditional_variance(spec: DgpSpec, pts: np.ndarray) -> np.ndarray:
    """Var(y | x) = 1/4 - h0(x)^2 for the single-index design."""
    _require_single_index(spec)
    h0 = true_h0(spec.design, pts[:, None, :], spec.theta0)
    return 0.25 - h0**2


def influence_surface_matrix(spec: DgpSpec, *, nodes: int = 64) -> np.ndarray:
    """Slice integral of sigma0^2(x)/(f(0)+1)^2 x x' p(x) through the origin."""
    _require_single_index(spec)
    f0 = LOGISTIC_DENSITY_AT_ZERO
    density = (spec.covariate_high - spec.covariate_low) ** (-spec.d)

    def integrand(pts):
        s2 = conditional_variance(spec, pts)
        xxt = np.einsum("bi,bj->bij", pts, pts)
        return (s2 / (f0 + 1.0) ** 2 * density)[:, None, None] * xxt

    omega = hausdorff_integral(
        integrand, spec.theta0, 0.0, spec.covariate_low, spec.covariate_high,
        nodes=nodes,
    )
    return 0.5 * (omega + omega.T)


def _kernel_box_halfwidth(kernel: KernelSpec) -> float:
    # truncation box for the unit kernel: exact for compact support,
    # far-tail cutoff for Gaussian families (mass beyond ~1e-17)
    return 1.0 if kernel.family == "epanechnikov" else 9.0


def kernel_density(kernel: KernelSpec, pts: np.ndarray) -> np.ndarray:
    """Unit (bandwidth-free) product kernel evaluated at rows of ``pts``."""
    return product_kernel(pts, kernel.family_code, kernel.order)


def kernel_slice_profile(
    kernel: KernelSpec, theta, t: float, *, nodes: int = 48
) -> float:
    """Profile of the product kernel on the slice at signed distance ``t``.

    Integrating the multivariate kernel over slices yields a univariate
    kernel of the same smoothness order; the Gaussian product's profile is
    the standard normal density for every unit direction.
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    half = _kernel_box_halfwidth(kernel)
    if abs(t) >= half * np.abs(theta).sum():
        return 0.0
    return hausdorff_integral(
        lambda pts: kernel_density(kernel, pts), theta, t, -half, half, nodes=nodes
    )


def profile_moment(kernel: KernelSpec, theta, power: int, *, nodes=48, t_nodes=160):
    """Integral of t**power times the slice profile over all t."""
    theta = np.asarray(theta, dtype=np.float64).ravel()
    half = _kernel_box_halfwidth(kernel) * np.abs(theta).sum()
    t, w = _gauss_nodes(t_nodes, -half, half)
    vals = np.array(
        [kernel_slice_profile(kernel, theta, tk, nodes=nodes) for tk in t]
    )
    return float(np.sum(w * t**power * vals))


def profile_square_integral(kernel: KernelSpec, theta, *, nodes=48, t_nodes=160):
    """Integral of the squared slice profile over all t."""
    theta = np.asarray(theta, dtype=np.float64).ravel()
    half = _kernel_box_halfwidth(kernel) * np.abs(theta).sum()
    t, w = _gauss_nodes(t_nodes, -half, half)
    vals = np.array(
        [kernel_slice_profile(kernel, theta, tk, nodes=nodes) for tk in t]
    )
    return float(np.sum(w * vals**2))


def influence_variance_matrix(
    spec: DgpSpec, kernel: KernelSpec, *, nodes: int = 64, t_nodes: int = 160
) -> np.ndarray:
    """First-stage influence variance matrix for the single-index design.

    The squared-profile integral of the smoothing kernel scales the slice
    integral of the conditional outcome variance times x x' p(x).
    """
    g2 = profile_square_integral(kernel, spec.theta0, t_nodes=t_nodes)
    return g2 * influence_surface_matrix(spec, nodes=nodes)


def slice_functional(h, spec: DgpSpec, *, nodes: int = 64) -> np.ndarray:
    """Linear slice functional of ``h``: integral of h(x) x p(x)/(f(0)+1).

    Plugging in the difference between a fitted and the true regression
    function tracks the leading first-stage error term in simulations.
    ``h`` must accept a batch of points (B, d).
    """
    _require_single_index(spec)
    f0 = LOGISTIC_DENSITY_AT_ZERO
    density = (spec.covariate_high - spec.covariate_low) ** (-spec.d)

    def integrand(pts):
        vals = np.asarray(h(pts), dtype=np.float64).reshape(-1)
        return (vals * density / (f0 + 1.0))[:, None] * pts

    return hausdorff_integral(
        integrand, spec.theta0, 0.0, spec.covariate_low, spec.covariate_high,
        nodes=nodes,
    )


def misc_hyperplane_sum(
    integrands,
    theta,
    n_index: int,
    dim: int,
    low: float,
    high: float,
    *,
    mc_draws: int = 2_000_000,
    seed: int = 0,
):
    """Sum of per-index slice integrals for multi-index designs.

    ``integrands[j]`` is evaluated on full stacked covariate rows (B, J*d)
    and integrated over the slice where index j's block is orthogonal to
    ``theta``.  Weight functions are supplied by the caller; no closed form
    is assumed for them.
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if len(integrands) != n_index:
        raise ConfigurationError("need one integrand per index")
    total = None
    for j, m in enumerate(integrands):
        direction = np.zeros(n_index * dim)
        direction[j * dim : (j + 1) * dim] = theta
        part = hausdorff_integral(
            m, direction, 0.0, low, high, mc_draws=mc_draws, seed=seed + j
        )
        total = part if total is None else total + part
    return total
