"""Backend selection for the numerical hot loops.

Prefers the compiled extension ``relumax._kernels``; falls back to the
pure-NumPy implementation when the extension is missing or when the
environment variable ``RMS_PURE_PYTHON`` is set to a non-empty value other
than ``0``.
"""

from __future__ import annotations

import os

from . import _np_kernels

_FORCE_PURE = os.environ.get("RMS_PURE_PYTHON", "").strip() not in ("", "0")

if not _FORCE_PURE:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _np_kernels
else:
    _impl = _np_kernels

BACKEND = _impl.NAME

FAMILY_GAUSSIAN = _np_kernels.FAMILY_GAUSSIAN
FAMILY_EPANECHNIKOV = _np_kernels.FAMILY_EPANECHNIKOV
FAMILY_GAUSSIAN_ORDER = _np_kernels.FAMILY_GAUSSIAN_ORDER

criterion_terms = _impl.criterion_terms
criterion_subgrad = _impl.criterion_subgrad
adam_sphere_max = _impl.adam_sphere_max
nw_predict = _impl.nw_predict


def available_backends():
    """Name -> module map of importable backends (for tests/benchmarks)."""
    impls = {"numpy": _np_kernels}
    try:
        from . import _kernels

        impls["compiled"] = _kernels
    except ImportError:
        pass
    return impls
