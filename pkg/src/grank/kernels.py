"""Kernel backend selection.

The compiled extension is used when it imports; set ``GRANK_PURE_PYTHON=1``
to force the numpy/scipy fallback.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("GRANK_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

backend = _compiled if _compiled is not None else _kernels_py
BACKEND = backend.NAME


def available() -> list:
    """Backends usable in this interpreter, compiled first."""
    return [b for b in (_compiled, _kernels_py) if b is not None]


class CsrOperator:
    """Sparse pattern (optionally weighted) applied to dense column blocks."""

    def __init__(self, indptr, indices, n_cols, weights=None, impl=None):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int32)
        self.weights = None if weights is None else np.ascontiguousarray(weights, dtype=np.float64)
        self.n_rows = len(self.indptr) - 1
        self.n_cols = n_cols
        self.impl = impl or backend
        if self.impl is _kernels_py:
            import scipy.sparse as sp

            data = np.ones(len(self.indices)) if self.weights is None else self.weights
            self._mat = sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n_rows, n_cols))
        else:
            self._mat = None

    def __call__(self, Z, out=None):
        Z = np.ascontiguousarray(Z, dtype=np.float64)
        if out is None:
            out = np.empty((self.n_rows, Z.shape[1]))
        if self._mat is not None:
            out[...] = self._mat @ Z
        else:
            self.impl.spmm(self.indptr, self.indices, self.weights, Z, out)
        return out
