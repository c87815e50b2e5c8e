"""Backend selection for the OMP hot kernel.

The compiled Cython kernel is preferred when the extension built; the numpy
implementation is the fallback.  ``ROTSPARSE_KERNEL`` (``auto`` / ``compiled``
/ ``numpy``) or :func:`set_backend` override the choice, e.g. for the
backend-comparison benchmark.
"""

from __future__ import annotations

import os

from . import _omp_numpy

try:
    from . import _omp_cy
except ImportError:  # extension not built; numpy fallback only
    _omp_cy = None

BACKENDS = ("auto", "compiled", "numpy")
_backend = os.environ.get("ROTSPARSE_KERNEL", "auto")


def compiled_available() -> bool:
    return _omp_cy is not None


def set_backend(name: str) -> None:
    global _backend
    if name not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {name!r}")
    if name == "compiled" and not compiled_available():
        raise ValueError("compiled kernel requested but the extension is not built")
    _backend = name


def active_backend() -> str:
    """Name of the backend omp_batch will actually run on."""
    if _backend == "auto":
        return "compiled" if compiled_available() else "numpy"
    return _backend


def omp_batch(aug, targets, sparsity, res_tol=1e-12, corr_tol=1e-12):
    if active_backend() == "compiled":
        return _omp_cy.omp_batch(aug, targets, sparsity, res_tol, corr_tol)
    return _omp_numpy.omp_batch(aug, targets, sparsity, res_tol, corr_tol)


omp_batch_grouped = _omp_numpy.omp_batch_grouped
