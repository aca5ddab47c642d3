"""Interest experts, the confidence network, and score aggregation.

Each expert owns a batchnorm stage, a three-layer scorer over the flattened
interest matrix plus context, and a trainable prototype vector. One shared
three-layer confidence net maps [interest vector || context] to a
combination vector; its scaled dot product with the matching prototype,
softmaxed over experts, yields the confidence weights. Besides the
confidence-weighted aggregation there are three reference aggregators:
expert averaging, hard routing to the most confident expert, and a
gating-network mixture.

Logit convention: column 0 scores click, column 1 non-click.
"""

from dataclasses import dataclass

import numpy as np

from . import init
from .errors import ConfigError, ContractError, DimensionError
from .numerics import (
    BatchNormState,
    Tensor,
    add,
    batchnorm_1d,
    concat_lastdim,
    leaky_relu,
    linear,
    mul,
    reshape,
    scale,
    scale_rows,
    slice_lastdim,
    softmax_lastdim,
    sum_lastdim,
)

AGGREGATION_MODES = ("deminet", "multi_avg", "hard_routing", "moe")


@dataclass
class ExpertParams:
    gamma: Tensor
    beta: Tensor
    bn_state: BatchNormState
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w3: Tensor
    b3: Tensor
    prototype: Tensor    # (d,)


@dataclass
class ConfiNetParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w3: Tensor
    b3: Tensor


@dataclass
class GatingParams:
    w: Tensor    # (context_width, K)
    b: Tensor    # (K,)


def build_expert_params(input_width: int, hidden: tuple, d: int, index: int,
                        rng: np.random.Generator) -> ExpertParams:
    h1, h2 = hidden
    p = f"expert{index}"
    return ExpertParams(
        gamma=init.ones((input_width,), f"{p}.bn.gamma"),
        beta=init.zeros((input_width,), f"{p}.bn.beta"),
        bn_state=BatchNormState(input_width),
        w1=init.xavier_uniform((input_width, h1), rng, f"{p}.fc1.W"),
        b1=init.zeros((h1,), f"{p}.fc1.b"),
        w2=init.xavier_uniform((h1, h2), rng, f"{p}.fc2.W"),
        b2=init.zeros((h2,), f"{p}.fc2.b"),
        w3=init.xavier_uniform((h2, 2), rng, f"{p}.fc3.W"),
        b3=init.zeros((2,), f"{p}.fc3.b"),
        prototype=init.embedding_table((d,), rng, f"{p}.prototype"),
    )


def build_confinet_params(input_width: int, hidden: tuple, d: int,
                          rng: np.random.Generator) -> ConfiNetParams:
    h1, h2 = hidden
    return ConfiNetParams(
        w1=init.xavier_uniform((input_width, h1), rng, "confinet.fc1.W"),
        b1=init.zeros((h1,), "confinet.fc1.b"),
        w2=init.xavier_uniform((h1, h2), rng, "confinet.fc2.W"),
        b2=init.zeros((h2,), "confinet.fc2.b"),
        w3=init.xavier_uniform((h2, d), rng, "confinet.fc3.W"),
        b3=init.zeros((d,), "confinet.fc3.b"),
    )


def build_gating_params(context_width: int, num_experts: int,
                        rng: np.random.Generator) -> GatingParams:
    return GatingParams(
        w=init.xavier_uniform((context_width, num_experts), rng, "gating.W"),
        b=init.zeros((num_experts,), "gating.b"),
    )


def expert_named_parameters(experts) -> dict:
    out = {}
    for e in experts:
        for t in (e.gamma, e.beta, e.w1, e.b1, e.w2, e.b2, e.w3, e.b3, e.prototype):
            out[t.name] = t
    return out


def confinet_named_parameters(confi: ConfiNetParams) -> dict:
    return {t.name: t for t in (confi.w1, confi.b1, confi.w2, confi.b2, confi.w3, confi.b3)}


def _mlp3(x: Tensor, w1, b1, w2, b2, w3, b3, slope: float) -> Tensor:
    h = leaky_relu(linear(x, w1, b1), slope)
    h = leaky_relu(linear(h, w2, b2), slope)
    return linear(h, w3, b3)


def expert_scores(e_prime: Tensor, experts, training: bool, slope: float = 0.01,
                  update_stats: bool = True) -> list:
    """Per-expert click/non-click logits, one (B, 2) tensor per expert."""
    width = experts[0].gamma.shape[0]
    if e_prime.shape[-1] != width:
        raise DimensionError(
            f"expert input width {e_prime.shape[-1]} does not match configured {width}"
        )
    out = []
    for e in experts:
        x = batchnorm_1d(e_prime, e.gamma, e.beta, e.bn_state, training, update_stats)
        out.append(_mlp3(x, e.w1, e.b1, e.w2, e.b2, e.w3, e.b3, slope))
    return out


def confidence_weights(v_list, context: Tensor, confi: ConfiNetParams,
                       prototypes, slope: float = 0.01) -> Tensor:
    """Softmax-normalized expert confidences, shape (B, K).

    Each route's combination vector is dotted with that expert's prototype
    and scaled by 1/sqrt(d) before the softmax over experts.
    """
    d = prototypes[0].shape[0]
    b = context.shape[0]
    cols = []
    for vk, pk in zip(v_list, prototypes):
        e_k = concat_lastdim([vk, context])
        c_k = _mlp3(e_k, confi.w1, confi.b1, confi.w2, confi.b2, confi.w3, confi.b3, slope)
        dot = sum_lastdim(mul(c_k, pk))
        cols.append(reshape(dot, (b, 1)))
    logits = scale(concat_lastdim(cols), 1.0 / np.sqrt(d))
    return softmax_lastdim(logits)


def _check_weight_rows(omega: Tensor) -> None:
    sums = omega.data.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ContractError(
            f"confidence weights must sum to 1 per sample; worst deviation {np.abs(sums - 1).max():.3e}"
        )


def aggregate_predict(o_list, omega: Tensor) -> Tensor:
    """Softmax of the confidence-weighted sum of expert logits, shape (B, 2)."""
    _check_weight_rows(omega)
    b = omega.shape[0]
    mixed = None
    for k, o_k in enumerate(o_list):
        w_col = reshape(slice_lastdim(omega, k, 1), (b,))
        term = scale_rows(o_k, w_col)
        mixed = term if mixed is None else add(mixed, term)
    return softmax_lastdim(mixed)


def baseline_aggregate(o_list, omega, mode: str, gating_logits: Tensor | None = None) -> Tensor:
    """Reference aggregators for the ensemble comparison.

    multi_avg averages expert logits; hard_routing picks the most confident
    expert (ties to the lowest index); moe mixes per-expert probabilities by
    the gating distribution.
    """
    if mode == "multi_avg":
        mixed = o_list[0]
        for o_k in o_list[1:]:
            mixed = add(mixed, o_k)
        return softmax_lastdim(scale(mixed, 1.0 / len(o_list)))
    if mode == "hard_routing":
        _check_weight_rows(omega)
        # argmax with ties to the lowest expert index; selection is not differentiated
        choice = np.argmax(omega.data, axis=-1)
        b = omega.shape[0]
        mixed = None
        for k, o_k in enumerate(o_list):
            sel = (choice == k).astype(float)
            term = scale_rows(o_k, sel)
            mixed = term if mixed is None else add(mixed, term)
        return softmax_lastdim(mixed)
    if mode == "moe":
        if gating_logits is None:
            raise ContractError("moe aggregation needs gating logits")
        g = softmax_lastdim(gating_logits)
        b = g.shape[0]
        mixed = None
        for k, o_k in enumerate(o_list):
            g_col = reshape(slice_lastdim(g, k, 1), (b,))
            term = scale_rows(softmax_lastdim(o_k), g_col)
            mixed = term if mixed is None else add(mixed, term)
        return mixed
    raise ConfigError(f"unknown aggregation mode {mode!r}; expected one of {AGGREGATION_MODES}")
