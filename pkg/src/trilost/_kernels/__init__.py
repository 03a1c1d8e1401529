"""Batched Monte Carlo kernels with two interchangeable backends.

``numpy_backend`` vectorizes every solver across draws; ``_cykernels`` is a
compiled per-draw loop built at install time.  ``get_backend`` selects one:
``auto`` prefers the compiled extension when present, and the
``TRILOST_KERNELS`` environment variable (``numpy``/``cython``/``auto``)
overrides the default.  Both backends implement the same functions and agree
to tight numerical tolerance (see the kernel parity tests); results are
bit-reproducible for a fixed backend.
"""

from __future__ import annotations

import os

from . import numpy_backend

try:  # pragma: no cover - depends on build environment
    from . import _cykernels as _cy
except ImportError:  # pragma: no cover
    _cy = None

HAVE_CYTHON = _cy is not None


class _CythonBackend:
    """Compiled kernels, with NumPy fallbacks for the uncompiled ones."""

    name = "cython"

    @staticmethod
    def batch_dlt(xbar, T, p, unit_norm=False):
        return _cy.batch_dlt(xbar, T, p, unit_norm)

    @staticmethod
    def batch_lost(xbar, T, p, sigma_x):
        return _cy.batch_lost(xbar, T, p, sigma_x)

    @staticmethod
    def batch_range2(xbar, T, p):
        return _cy.batch_range2(xbar, T, p)

    @staticmethod
    def batch_quat(xbar, T, p, w):
        return _cy.batch_quat(xbar, T, p, w)

    # The two-view polynomial solver is eigenvalue-bound; the batched NumPy
    # eigensolver is already compiled code, so both backends share it.
    batch_hs = staticmethod(numpy_backend.batch_hs)


class _NumpyBackend:
    name = "numpy"

    batch_dlt = staticmethod(numpy_backend.batch_dlt)
    batch_lost = staticmethod(numpy_backend.batch_lost)
    batch_range2 = staticmethod(numpy_backend.batch_range2)
    batch_quat = staticmethod(numpy_backend.batch_quat)
    batch_hs = staticmethod(numpy_backend.batch_hs)


def get_backend(name: str = "auto"):
    """Return the kernel backend by name ('auto', 'numpy', or 'cython')."""
    if name == "auto":
        name = os.environ.get("TRILOST_KERNELS", "auto")
    if name == "auto":
        name = "cython" if HAVE_CYTHON else "numpy"
    if name == "numpy":
        return _NumpyBackend
    if name == "cython":
        if not HAVE_CYTHON:
            raise ImportError("compiled kernel extension is not available")
        return _CythonBackend
    raise ValueError(f"unknown kernel backend {name!r}")
