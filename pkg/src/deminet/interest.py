"""Target-conditioned multi-interest extraction.

Each of the K routes scores every sequence position with a two-layer
feed-forward net over [position embedding || target embedding], normalizes
the scores over valid positions, and pools the positions into one interest
vector. Softmax normalization keeps the interest scale independent of the
sequence length; set ``normalize=False`` for the raw-weight variant.
"""

from dataclasses import dataclass

import numpy as np

from . import init
from .errors import ContractError, DataError
from .numerics import (
    Tensor,
    add,
    concat_lastdim,
    edge_softmax,
    gather_rows,
    leaky_relu,
    linear,
    matmul,
    reshape,
    scale_rows,
    segment_sum_rows,
    softmax_lastdim,
)


@dataclass
class InterestHeadParams:
    w1: Tensor   # (2d, d_a)
    b1: Tensor   # (d_a,)
    w2: Tensor   # (d_a, 1)
    b2: Tensor   # (1,)


@dataclass
class InterestParams:
    heads: list
    slope: float = 0.01
    normalize: bool = True


@dataclass
class InterestMatrix:
    """K interest vectors for one sample, plus the attention rows behind them."""

    v: Tensor            # (K, d)
    attention: Tensor    # (K, n); zero at padding positions


def build_interest_params(d: int, num_routes: int, hidden: int,
                          rng: np.random.Generator, slope: float = 0.01,
                          normalize: bool = True) -> InterestParams:
    heads = []
    for k in range(num_routes):
        heads.append(InterestHeadParams(
            w1=init.xavier_uniform((2 * d, hidden), rng, f"interest.head{k}.W1"),
            b1=init.zeros((hidden,), f"interest.head{k}.b1"),
            w2=init.xavier_uniform((hidden, 1), rng, f"interest.head{k}.W2"),
            b2=init.zeros((1,), f"interest.head{k}.b2"),
        ))
    return InterestParams(heads=heads, slope=slope, normalize=normalize)


def named_parameters(params: InterestParams) -> dict:
    out = {}
    for head in params.heads:
        for t in (head.w1, head.b1, head.w2, head.b2):
            out[t.name] = t
    return out


def route_weights(h_star: Tensor, target_rows: Tensor, head: InterestHeadParams,
                  sample_of_node: np.ndarray, num_samples: int,
                  slope: float, normalize: bool) -> Tensor:
    """Per-position weights of one route over a flattened batch."""
    pair = concat_lastdim([h_star, target_rows])
    hidden = leaky_relu(linear(pair, head.w1, head.b1), slope)
    logits = reshape(add(matmul(hidden, head.w2), head.b2), (h_star.shape[0],))
    if normalize:
        return edge_softmax(logits, sample_of_node, num_samples)
    return logits


def extract_interests_batched(h_star: Tensor, h_t: Tensor, params: InterestParams,
                              sample_of_node: np.ndarray, num_samples: int,
                              collect=None):
    """All K interest vectors for a flattened batch.

    Returns (v_list, weight_list): K tensors of shape (B, d) and the K
    per-node weight vectors that produced them.
    """
    target_rows = gather_rows(h_t, sample_of_node)
    v_list, w_list = [], []
    for head in params.heads:
        w = route_weights(h_star, target_rows, head, sample_of_node,
                          num_samples, params.slope, params.normalize)
        if collect is not None:
            collect.append(("interest", w.data, sample_of_node, num_samples))
        v_list.append(segment_sum_rows(scale_rows(h_star, w), sample_of_node, num_samples))
        w_list.append(w)
    return v_list, w_list


def extract_interests(h_star: Tensor, h_t: Tensor, params: InterestParams,
                      valid_len: int) -> InterestMatrix:
    """Single-sample entry point over a padded (n, d) sequence matrix.

    Positions at or beyond ``valid_len`` are ignored entirely: they receive
    zero attention and cannot influence the interest vectors.
    """
    n = h_star.shape[0]
    if valid_len == 0:
        raise DataError("cannot extract interests from an empty sequence")
    if not (1 <= valid_len <= n):
        raise ContractError(f"valid_len {valid_len} out of range for {n} positions")
    valid = gather_rows(h_star, np.arange(valid_len, dtype=np.int64))
    h_t2 = reshape(h_t, (1, h_t.shape[-1]))
    seg = np.zeros(valid_len, dtype=np.int64)
    v_list, w_list = extract_interests_batched(valid, h_t2, params, seg, 1)
    v = concat_lastdim([reshape(vk, (1, vk.shape[1])) for vk in v_list])
    v = reshape(v, (len(params.heads), h_star.shape[1]))
    att = np.zeros((len(params.heads), n))
    for k, w in enumerate(w_list):
        att[k, :valid_len] = w.data
    return InterestMatrix(v=v, attention=Tensor(att))


def interest_distributions(v_list) -> list:
    """Dimension-level distribution of each interest vector (softmax over d)."""
    return [softmax_lastdim(vk) for vk in v_list]


def distributions_from_matrix(m: InterestMatrix) -> Tensor:
    """K probability rows over the d coordinates of one sample's interests."""
    return softmax_lastdim(m.v)
