"""Pure-numpy implementations of the per-edge segment kernels.

Used when the compiled extension is unavailable (or forced via
DEMINET_KERNELS=numpy). Semantically identical to the Cython versions;
``np.bincount`` accumulates in input order, matching the C loops.
"""

import numpy as np


def segment_sum(values: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    """Sum scalar ``values`` into ``n`` buckets given by ``seg``."""
    if values.size == 0:
        return np.zeros(n, dtype=np.float64)
    return np.bincount(seg, weights=values, minlength=n).astype(np.float64, copy=False)


def segment_sum_rows(values: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    """Sum rows of ``values`` (m x d) into ``n`` buckets given by ``seg``."""
    m, d = values.shape
    out = np.zeros((n, d), dtype=np.float64)
    if m == 0:
        return out
    # Column-wise bincount is far faster than np.add.at for small d.
    for j in range(d):
        out[:, j] = np.bincount(seg, weights=values[:, j], minlength=n)
    return out


def edge_softmax_fwd(scores: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    """Softmax of ``scores`` within each segment, max-shifted for stability."""
    if scores.size == 0:
        return np.zeros(0, dtype=np.float64)
    seg_max = np.full(n, -np.inf, dtype=np.float64)
    np.maximum.at(seg_max, seg, scores)
    ex = np.exp(scores - seg_max[seg])
    denom = np.bincount(seg, weights=ex, minlength=n)
    return ex / denom[seg]


def edge_softmax_bwd(alpha: np.ndarray, grad: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    """Gradient of edge_softmax w.r.t. the raw scores."""
    if alpha.size == 0:
        return np.zeros(0, dtype=np.float64)
    t = alpha * grad
    s = np.bincount(seg, weights=t, minlength=n)
    return t - alpha * s[seg]


def edge_softmax_fwd_cols(scores: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    """Column-wise segment softmax over a (m, k) score matrix."""
    m, k = scores.shape
    if m == 0:
        return np.zeros((0, k), dtype=np.float64)
    seg_max = np.full((n, k), -np.inf, dtype=np.float64)
    np.maximum.at(seg_max, seg, scores)
    ex = np.exp(scores - seg_max[seg])
    denom = segment_sum_rows(ex, seg, n)
    return ex / denom[seg]


def edge_softmax_bwd_cols(alpha: np.ndarray, grad: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    if alpha.size == 0:
        return np.zeros_like(alpha)
    t = alpha * grad
    s = segment_sum_rows(t, seg, n)
    return t - alpha * s[seg]
