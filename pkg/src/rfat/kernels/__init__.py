"""Hot numeric kernels: optional compiled core with a NumPy/SciPy fallback.

The Cython extension is built in place with ``python setup.py build_ext
--inplace`` (or by ``pip install``) when Cython and a C compiler are
available; otherwise the fallback in ``_ref`` is selected at import time.
``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import logging

import numpy as np

from . import _ref

logger = logging.getLogger(__name__)

try:
    from . import _core  # type: ignore[attr-defined]
except ImportError:
    _core = None
    logger.debug("compiled kernel core not available; using NumPy fallback")

_impl = _core if _core is not None else _ref


def backend_name() -> str:
    """Name of the active kernel backend: 'cython' or 'numpy'."""
    return "cython" if _impl is _core and _core is not None else "numpy"


def available_backends() -> dict:
    """Mapping of backend name to implementing module (for tests/benchmarks)."""
    out = {"numpy": _ref}
    if _core is not None:
        out["cython"] = _core
    return out


def iir_filter(b, a, x) -> np.ndarray:
    """IIR filter (transposed direct form II, zero state) on a complex sequence."""
    b = np.ascontiguousarray(b, dtype=np.float64)
    a = np.ascontiguousarray(a, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.complex128)
    return _impl.iir_filter(b, a, x)


def arvtdnn_features(x, memory_depth: int, envelope_order: int) -> np.ndarray:
    """Time-delay I/Q + envelope-power feature matrix, shape (N, (M+1)*(2+K))."""
    x = np.ascontiguousarray(x, dtype=np.complex128)
    return _impl.arvtdnn_features(x, int(memory_depth), int(envelope_order))
