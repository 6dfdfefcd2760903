# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot loops: sign-alignment scores, their subgradient, the
sphere-projected multi-start ADAM ascent, and locally weighted prediction.

Must stay semantically in lockstep with ``relumax._np_kernels``.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt

cnp.import_array()

NAME = "compiled"

FAMILY_GAUSSIAN = 0
FAMILY_EPANECHNIKOV = 1
FAMILY_GAUSSIAN_ORDER = 2

cdef double _NORM_CONST = 0.3989422804014327  # 1/sqrt(2*pi)
cdef double _DEGENERATE_FLOOR = 1e-300
cdef double _HUGE = 1e308


cdef void _subgrad_pass(const double[:, :, ::1] x, const double[::1] h,
                        const double[::1] theta, double* q_plus,
                        double* q_minus, double* grad) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], J = x.shape[1], d = x.shape[2]
    cdef Py_ssize_t i, j, k, ju, jv
    cdef double dot, ru, rv, u, v, hi, qp = 0.0, qm = 0.0
    for k in range(d):
        grad[k] = 0.0
    for i in range(n):
        u = _HUGE
        v = _HUGE
        ju = 0
        jv = 0
        for j in range(J):
            dot = 0.0
            for k in range(d):
                dot += x[i, j, k] * theta[k]
            ru = -dot if dot < 0.0 else 0.0
            rv = dot if dot > 0.0 else 0.0
            if ru < u:
                u = ru
                ju = j
            if rv < v:
                v = rv
                jv = j
        hi = h[i]
        if hi - u > 0.0:
            qp += hi - u
            if u > 0.0:
                for k in range(d):
                    grad[k] += x[i, ju, k]
        if -hi - v > 0.0:
            qm += -hi - v
            if v > 0.0:
                for k in range(d):
                    grad[k] -= x[i, jv, k]
    q_plus[0] = qp / n
    q_minus[0] = qm / n
    for k in range(d):
        grad[k] /= n


cdef void _terms_pass(const double[:, :, ::1] x, const double[::1] h,
                      const double[::1] theta, double* q_plus,
                      double* q_minus) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], J = x.shape[1], d = x.shape[2]
    cdef Py_ssize_t i, j, k
    cdef double dot, ru, rv, u, v, hi, qp = 0.0, qm = 0.0
    for i in range(n):
        u = _HUGE
        v = _HUGE
        for j in range(J):
            dot = 0.0
            for k in range(d):
                dot += x[i, j, k] * theta[k]
            ru = -dot if dot < 0.0 else 0.0
            rv = dot if dot > 0.0 else 0.0
            if ru < u:
                u = ru
            if rv < v:
                v = rv
        hi = h[i]
        if hi - u > 0.0:
            qp += hi - u
        if -hi - v > 0.0:
            qm += -hi - v
    q_plus[0] = qp / n
    q_minus[0] = qm / n


def criterion_terms(const double[:, :, ::1] x, const double[::1] h,
                    const double[::1] theta):
    """Mean positive/negative sign-alignment scores over the sample."""
    cdef double qp = 0.0, qm = 0.0
    with nogil:
        _terms_pass(x, h, theta, &qp, &qm)
    return qp, qm


def criterion_subgrad(const double[:, :, ::1] x, const double[::1] h,
                      const double[::1] theta):
    """Scores plus an ascent subgradient of their sample mean."""
    cdef Py_ssize_t d = x.shape[2]
    grad_arr = np.zeros(d)
    cdef double[::1] grad = grad_arr
    cdef double qp = 0.0, qm = 0.0
    with nogil:
        _subgrad_pass(x, h, theta, &qp, &qm, &grad[0])
    return qp, qm, grad_arr


def adam_sphere_max(const double[:, :, ::1] x, const double[::1] h,
                    const double[:, ::1] theta0, double lr, int epochs,
                    double beta1, double beta2, double eps, bint record_trace):
    """Multi-start ADAM ascent with renormalization onto the unit sphere."""
    cdef Py_ssize_t n_starts = theta0.shape[0], d = theta0.shape[1]
    thetas_arr = np.array(theta0, dtype=np.float64, copy=True)
    q_arr = np.empty(n_starts)
    m_arr = np.zeros(d)
    v_arr = np.zeros(d)
    g_arr = np.zeros(d)
    cdef double[:, ::1] thetas = thetas_arr
    cdef double[::1] q_final = q_arr
    cdef double[::1] m = m_arr
    cdef double[::1] v = v_arr
    cdef double[::1] g = g_arr
    trace_q_arr = None
    trace_theta_arr = None
    cdef double[:, ::1] trace_q = None
    cdef double[:, :, ::1] trace_theta = None
    if record_trace:
        trace_q_arr = np.empty((n_starts, epochs + 1))
        trace_theta_arr = np.empty((n_starts, epochs + 1, d))
        trace_q = trace_q_arr
        trace_theta = trace_theta_arr
    cdef Py_ssize_t s, t, k
    cdef double qp, qm, p1, p2, nrm, mhat, vhat
    with nogil:
        for s in range(n_starts):
            for k in range(d):
                m[k] = 0.0
                v[k] = 0.0
            p1 = 1.0
            p2 = 1.0
            for t in range(1, epochs + 1):
                _subgrad_pass(x, h, thetas[s], &qp, &qm, &g[0])
                if record_trace:
                    trace_q[s, t - 1] = qp + qm
                    for k in range(d):
                        trace_theta[s, t - 1, k] = thetas[s, k]
                p1 *= beta1
                p2 *= beta2
                nrm = 0.0
                for k in range(d):
                    m[k] = beta1 * m[k] + (1.0 - beta1) * g[k]
                    v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k]
                    mhat = m[k] / (1.0 - p1)
                    vhat = v[k] / (1.0 - p2)
                    thetas[s, k] += lr * mhat / (sqrt(vhat) + eps)
                    nrm += thetas[s, k] * thetas[s, k]
                nrm = sqrt(nrm)
                if nrm > 1e-12:
                    for k in range(d):
                        thetas[s, k] /= nrm
            _terms_pass(x, h, thetas[s], &qp, &qm)
            q_final[s] = qp + qm
            if record_trace:
                trace_q[s, epochs] = q_final[s]
                for k in range(d):
                    trace_theta[s, epochs, k] = thetas[s, k]
    return thetas_arr, q_arr, trace_q_arr, trace_theta_arr


cdef inline double _kern1(double z, int family, int order) noexcept nogil:
    cdef double z2
    if family == 1:
        if z < -1.0 or z > 1.0:
            return 0.0
        return 0.75 * (1.0 - z * z)
    z2 = z * z
    if family == 2:
        if order == 4:
            return 0.5 * (3.0 - z2) * _NORM_CONST * exp(-0.5 * z2)
        if order == 6:
            return 0.125 * (15.0 - 10.0 * z2 + z2 * z2) * _NORM_CONST * exp(-0.5 * z2)
    return _NORM_CONST * exp(-0.5 * z2)


def nw_predict(const double[:, ::1] x_train, const double[::1] y_train,
               const double[:, ::1] x_query, double bandwidth, int family,
               int order):
    """Locally weighted mean of ``y_train`` at each query point."""
    cdef Py_ssize_t n = x_train.shape[0], p = x_train.shape[1]
    cdef Py_ssize_t n_query = x_query.shape[0]
    pred_arr = np.empty(n_query)
    degen_arr = np.zeros(n_query, dtype=np.uint8)
    cdef double[::1] pred = pred_arr
    cdef unsigned char[::1] degen = degen_arr
    cdef double y_bar = 0.0
    cdef Py_ssize_t i, q, k
    cdef double den, num, w, ss, z, gconst
    if n > 0:
        for i in range(n):
            y_bar += y_train[i]
        y_bar /= n
    gconst = _NORM_CONST**p
    with nogil:
        for q in range(n_query):
            den = 0.0
            num = 0.0
            if family == 0:
                for i in range(n):
                    ss = 0.0
                    for k in range(p):
                        z = (x_query[q, k] - x_train[i, k]) / bandwidth
                        ss += z * z
                    w = gconst * exp(-0.5 * ss)
                    den += w
                    num += w * y_train[i]
            else:
                for i in range(n):
                    w = 1.0
                    for k in range(p):
                        z = (x_query[q, k] - x_train[i, k]) / bandwidth
                        w *= _kern1(z, family, order)
                        if w == 0.0:
                            break
                    den += w
                    num += w * y_train[i]
            if fabs(den) < _DEGENERATE_FLOOR:
                pred[q] = y_bar
                degen[q] = 1
            else:
                pred[q] = num / den
    return pred_arr, degen_arr.astype(bool)
