"""Differentiable operations.

Every op validates shapes, checks its output for NaN/Inf (aborting the step
with the op's name if one appears), and records a local-gradient closure on
the active tape when an input requires grad. Index arrays (gather indices,
segment ids) are plain numpy arrays, not tensors; no gradient flows to them.
"""

import numpy as np

from .. import kernels
from ..errors import ContractError, DimensionError, NumericError
from .tensor import DTYPE, Tensor, _ensure_finite, active_tape


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data, requires_grad: bool) -> Tensor:
    data = np.asarray(data, dtype=DTYPE)
    try:
        _ensure_finite(data, f"op {op!r}")
    except NumericError:
        raise
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = requires_grad
    out.name = None
    return out


def _record(op: str, inputs, out: Tensor, backward_fn) -> None:
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(op, inputs, out, backward_fn)


def custom_op(name: str, inputs, out_data: np.ndarray, backward_fn) -> Tensor:
    """Register a fused operation with a hand-written backward closure.

    ``backward_fn`` maps the output gradient to one gradient (or None) per
    input tensor. Used for composite graph kernels where building the chain
    out of primitives would cost more in tape overhead than the math.
    """
    out = _make(name, out_data, any(t.requires_grad for t in inputs))
    _record(name, inputs, out, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make("add", a.data + b.data, a.requires_grad or b.requires_grad)

    def bw(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    _record("add", (a, b), out, bw)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make("sub", a.data - b.data, a.requires_grad or b.requires_grad)

    def bw(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.shape) if b.requires_grad else None,
        )

    _record("sub", (a, b), out, bw)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make("mul", a.data * b.data, a.requires_grad or b.requires_grad)

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    _record("mul", (a, b), out, bw)
    return out


def neg(x: Tensor) -> Tensor:
    out = _make("neg", -x.data, x.requires_grad)
    _record("neg", (x,), out, lambda g: (-g,))
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _make("scale", x.data * c, x.requires_grad)
    _record("scale", (x,), out, lambda g: (g * c,))
    return out


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    if not (0.0 < slope < 1.0):
        raise ContractError(f"leaky_relu slope must be in (0,1), got {slope}")
    mask = x.data >= 0
    out = _make("leaky_relu", np.where(mask, x.data, slope * x.data), x.requires_grad)
    _record("leaky_relu", (x,), out, lambda g: (np.where(mask, g, slope * g),))
    return out


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _make("log", np.log(x.data), x.requires_grad)
    _record("log", (x,), out, lambda g: (g / x.data,))
    return out


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    out = _make("clamp", np.clip(x.data, lo, hi), x.requires_grad)
    mask = (x.data >= lo) & (x.data <= hi)
    _record("clamp", (x,), out, lambda g: (g * mask,))
    return out


# ---------------------------------------------------------------------------
# linear algebra / shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    out = _make("matmul", a.data @ b.data, a.requires_grad or b.requires_grad)

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    _record("matmul", (a, b), out, bw)
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``x @ w + b`` (dense layer)."""
    return add(matmul(x, w), b)


def reshape(x: Tensor, shape) -> Tensor:
    out = _make("reshape", x.data.reshape(shape), x.requires_grad)
    _record("reshape", (x,), out, lambda g: (g.reshape(x.shape),))
    return out


def concat_lastdim(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat_lastdim of zero tensors")
    widths = [p.shape[-1] for p in parts]
    out = _make(
        "concat_lastdim",
        np.concatenate([p.data for p in parts], axis=-1),
        any(p.requires_grad for p in parts),
    )
    offsets = np.cumsum([0] + widths)

    def bw(g):
        return tuple(
            g[..., offsets[i]: offsets[i + 1]] if p.requires_grad else None
            for i, p in enumerate(parts)
        )

    _record("concat_lastdim", parts, out, bw)
    return out


def slice_lastdim(x: Tensor, start: int, width: int) -> Tensor:
    if start < 0 or start + width > x.shape[-1]:
        raise DimensionError(f"slice [{start}:{start + width}] out of range for {x.shape}")
    out = _make("slice_lastdim", x.data[..., start: start + width], x.requires_grad)

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[..., start: start + width] = g
        return (gx,)

    _record("slice_lastdim", (x,), out, bw)
    return out


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup ``x[idx]`` (embedding fetch); grads scatter-add back."""
    if x.ndim != 2:
        raise DimensionError(f"gather_rows needs a 2-D table, got {x.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise DimensionError(
            f"gather_rows index out of range [0,{x.shape[0]}): min {idx.min()}, max {idx.max()}"
        )
    out = _make("gather_rows", x.data[idx], x.requires_grad)
    n = x.shape[0]
    _record("gather_rows", (x,), out, lambda g: (kernels.segment_sum_rows(g, idx, n),))
    return out


def scale_rows(x: Tensor, s) -> Tensor:
    """Multiply row ``i`` of ``x`` by scalar ``s[i]``."""
    s_t = s if isinstance(s, Tensor) else None
    s_data = s_t.data if s_t is not None else np.asarray(s, dtype=DTYPE)
    if x.ndim != 2 or s_data.shape != (x.shape[0],):
        raise DimensionError(f"scale_rows shapes: x {x.shape}, s {s_data.shape}")
    req = x.requires_grad or (s_t is not None and s_t.requires_grad)
    out = _make("scale_rows", x.data * s_data[:, None], req)

    def bw(g):
        gx = g * s_data[:, None] if x.requires_grad else None
        gs = (
            np.einsum("ij,ij->i", g, x.data)
            if (s_t is not None and s_t.requires_grad) else None
        )
        return (gx, gs) if s_t is not None else (gx,)

    _record("scale_rows", (x, s_t) if s_t is not None else (x,), out, bw)
    return out


# ---------------------------------------------------------------------------
# reductions


def sum_all(x: Tensor) -> Tensor:
    out = _make("sum_all", x.data.sum(), x.requires_grad)
    _record("sum_all", (x,), out, lambda g: (np.broadcast_to(g, x.shape),))
    return out


def mean_all(x: Tensor) -> Tensor:
    inv = 1.0 / x.size
    out = _make("mean_all", x.data.mean(), x.requires_grad)
    _record("mean_all", (x,), out, lambda g: (np.broadcast_to(g * inv, x.shape),))
    return out


def sum_lastdim(x: Tensor) -> Tensor:
    out = _make("sum_lastdim", x.data.sum(axis=-1), x.requires_grad)
    _record("sum_lastdim", (x,), out, lambda g: (np.broadcast_to(g[..., None], x.shape),))
    return out


# ---------------------------------------------------------------------------
# softmax family


def softmax_lastdim(x: Tensor) -> Tensor:
    """Stable softmax over the last dimension; each slice sums to 1."""
    if x.shape[-1] == 0:
        raise DimensionError("softmax_lastdim over an empty last dimension")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    y = ex / ex.sum(axis=-1, keepdims=True)
    out = _make("softmax_lastdim", y, x.requires_grad)

    def bw(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    _record("softmax_lastdim", (x,), out, bw)
    return out


def edge_softmax(scores: Tensor, seg: np.ndarray, num_segments: int) -> Tensor:
    """Softmax of per-edge scores within destination segments.

    Empty segments simply contribute no entries; segments with one edge get
    weight 1. Segment ids need not be sorted.
    """
    if scores.ndim != 1:
        raise DimensionError(f"edge_softmax needs 1-D scores, got {scores.shape}")
    seg = np.asarray(seg, dtype=np.int64)
    alpha = kernels.edge_softmax_fwd(scores.data, seg, num_segments)
    out = _make("edge_softmax", alpha, scores.requires_grad)
    _record(
        "edge_softmax",
        (scores,),
        out,
        lambda g: (kernels.edge_softmax_bwd(out.data, g, seg, num_segments),),
    )
    return out


def segment_sum_rows(x: Tensor, seg: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``num_segments`` buckets (scatter aggregation)."""
    if x.ndim != 2:
        raise DimensionError(f"segment_sum_rows needs 2-D input, got {x.shape}")
    seg = np.asarray(seg, dtype=np.int64)
    out = _make("segment_sum_rows", kernels.segment_sum_rows(x.data, seg, num_segments), x.requires_grad)
    _record("segment_sum_rows", (x,), out, lambda g: (np.ascontiguousarray(g)[seg],))
    return out


# ---------------------------------------------------------------------------
# batch normalization


class BatchNormState:
    """Running statistics for one batchnorm_1d instance."""

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(num_features, dtype=DTYPE)
        self.running_var = np.ones(num_features, dtype=DTYPE)
        self.momentum = momentum
        self.eps = eps


def batchnorm_1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
    update_stats: bool = True,
) -> Tensor:
    """Per-feature normalization over the batch axis.

    Train mode normalizes with batch statistics (and optionally folds them
    into the running averages); eval mode is a deterministic affine map using
    the running statistics.
    """
    if x.ndim != 2:
        raise DimensionError(f"batchnorm_1d needs a 2-D batch, got {x.shape}")
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(
            f"batchnorm_1d parameter shapes {gamma.shape}/{beta.shape} do not match features {x.shape[1]}"
        )
    eps = state.eps
    if training:
        b = x.shape[0]
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        if update_stats:
            m = state.momentum
            unbiased = var * (b / (b - 1)) if b > 1 else var
            state.running_mean = (1 - m) * state.running_mean + m * mu
            state.running_var = (1 - m) * state.running_var + m * unbiased
        std = np.sqrt(var + eps)
        xhat = (x.data - mu) / std
        out = _make("batchnorm_1d", gamma.data * xhat + beta.data, x.requires_grad or gamma.requires_grad or beta.requires_grad)

        def bw(g):
            dgamma = (g * xhat).sum(axis=0) if gamma.requires_grad else None
            dbeta = g.sum(axis=0) if beta.requires_grad else None
            if x.requires_grad:
                dxhat = g * gamma.data
                dx = (dxhat * b - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)) / (b * std)
            else:
                dx = None
            return dx, dgamma, dbeta

        _record("batchnorm_1d", (x, gamma, beta), out, bw)
        return out

    std = np.sqrt(state.running_var + eps)
    xhat = (x.data - state.running_mean) / std
    out = _make("batchnorm_1d", gamma.data * xhat + beta.data, x.requires_grad or gamma.requires_grad or beta.requires_grad)

    def bw_eval(g):
        dgamma = (g * xhat).sum(axis=0) if gamma.requires_grad else None
        dbeta = g.sum(axis=0) if beta.requires_grad else None
        dx = g * (gamma.data / std) if x.requires_grad else None
        return dx, dgamma, dbeta

    _record("batchnorm_1d", (x, gamma, beta), out, bw_eval)
    return out
