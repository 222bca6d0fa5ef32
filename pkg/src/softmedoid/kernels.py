"""Backend selection for the hot aggregation kernel.

At import time the compiled extension is preferred; the vectorized numpy
implementation takes over when the extension is missing or when the
``SOFTMEDOID_PURE_PYTHON`` environment variable is set to a non-empty
value other than ``0``. Both backends compute the same quantity; the
benchmark script under ``benchmarks/`` compares them.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

from . import aggregate as agg

try:  # pragma: no cover - depends on the build environment
    from . import _kernels as _ext
except ImportError:  # pragma: no cover
    _ext = None

if os.environ.get("SOFTMEDOID_PURE_PYTHON", "0") not in ("", "0"):
    _ext = None


def backend() -> str:
    """Name of the active backend: ``cython`` or ``numpy``."""
    return "numpy" if _ext is None else "cython"


def csr_wsm_forward(Z: np.ndarray, A, T: float, k: int = 0) -> np.ndarray:
    """Weighted soft-medoid aggregation of Z over the rows of A (no cache)."""
    A = sp.csr_matrix(A)
    if _ext is not None:
        Z = np.ascontiguousarray(Z, dtype=np.float64)
        return _ext.csr_wsm_forward(
            Z,
            A.indptr.astype(np.int64),
            A.indices.astype(np.int64),
            A.data.astype(np.float64),
            float(T),
            int(k),
        )
    return csr_wsm_forward_numpy(Z, A, T, k)


def csr_wsm_forward_numpy(Z: np.ndarray, A, T: float, k: int = 0) -> np.ndarray:
    """Reference numpy path (always available)."""
    plan = agg.build_plan(A, k)
    if T <= 0.0:
        return agg._hard_medoid_forward(np.asarray(Z, dtype=np.float64), plan).out
    return agg._soft_forward(np.asarray(Z, dtype=np.float64), plan, float(T), alt=False).out
