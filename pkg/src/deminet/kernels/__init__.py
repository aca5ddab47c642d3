"""Kernel backend selection.

Prefers the compiled Cython extension, falls back to numpy. Override with
DEMINET_KERNELS=numpy|cython (cython then fails hard if the extension is
missing). All callers go through the wrappers here, which normalize dtypes
and contiguity once so both backends see identical inputs.
"""

import os

import numpy as np

from . import numpy_backend

_requested = os.environ.get("DEMINET_KERNELS", "auto")

if _requested == "numpy":
    _impl = numpy_backend
    BACKEND = "numpy"
elif _requested in ("auto", "cython"):
    try:
        from . import _segment as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        _impl = numpy_backend
        BACKEND = "numpy"
else:
    raise ValueError(f"DEMINET_KERNELS must be auto|numpy|cython, got {_requested!r}")


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def segment_sum(values, seg, n):
    return _impl.segment_sum(_f64(values), _i64(seg), int(n))


def segment_sum_rows(values, seg, n):
    return _impl.segment_sum_rows(_f64(values), _i64(seg), int(n))


def edge_softmax_fwd(scores, seg, n):
    return _impl.edge_softmax_fwd(_f64(scores), _i64(seg), int(n))


def edge_softmax_bwd(alpha, grad, seg, n):
    return _impl.edge_softmax_bwd(_f64(alpha), _f64(grad), _i64(seg), int(n))


def edge_softmax_fwd_cols(scores, seg, n):
    return _impl.edge_softmax_fwd_cols(_f64(scores), _i64(seg), int(n))


def edge_softmax_bwd_cols(alpha, grad, seg, n):
    return _impl.edge_softmax_bwd_cols(_f64(alpha), _f64(grad), _i64(seg), int(n))
