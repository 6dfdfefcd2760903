"""ReLU-based maximum-score estimation for single- and multi-index
single-crossing models.

Submodules: ``dgp`` (simulated designs), ``first_stage`` (nonparametric
regressors), ``criterion`` (sample objective and subgradient), ``optimizer``
(sphere-constrained ascent), ``joint`` (end-to-end network estimator),
``hyperplane`` (slice-integral diagnostics), ``harness`` (Monte Carlo
experiments and reports).  The numerical hot loops live in a compiled
extension with a NumPy fallback; see ``relumax.backend.BACKEND``.
"""

from .backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
