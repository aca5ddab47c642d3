"""Losses, the Adam optimizer, and the dual-view training step.

Both loss terms are batch means, so the regularizer weight means the same
thing at any batch size. The main prediction always comes from the full
graph; the two edge-dropout views feed only the interest regularizer. When
the effective regularizer weight is zero the view forwards are skipped
outright, which is what makes ``ssl_off`` and ``beta=0`` bit-identical.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError
from .model import Batch, DemiNet
from .numerics import (
    Tape,
    Tensor,
    add,
    backward,
    clamp,
    log,
    mean_all,
    mul,
    neg,
    scale,
    sub,
    sum_lastdim,
    zero_grads,
)

PROB_EPS = 1e-7


def ce_loss(y_hat: float, y: int) -> float:
    """Binary cross-entropy of one clamped click probability."""
    p = min(max(y_hat, PROB_EPS), 1.0 - PROB_EPS)
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


def bce_mean(click: Tensor, labels: np.ndarray) -> Tensor:
    """Batch-mean binary cross-entropy on the click column (differentiable)."""
    y = Tensor(labels)
    p = clamp(click, PROB_EPS, 1.0 - PROB_EPS)
    pos = mul(y, log(p))
    negt = mul(sub(Tensor(np.ones_like(labels)), y), log(sub(Tensor(np.ones_like(labels)), p)))
    return neg(mean_all(add(pos, negt)))


def kl_divergence(p: Tensor, q: Tensor) -> Tensor:
    """Batch-mean KL(p||q) between row distributions. Exactly 0 for p == q."""
    terms = mul(p, sub(log(p), log(q)))
    return mean_all(sum_lastdim(terms))


def ssl_loss(p_view1, p_view2) -> list:
    """Per-route symmetric JS-style divergence between the two view distributions."""
    out = []
    for p1, p2 in zip(p_view1, p_view2):
        out.append(scale(add(kl_divergence(p1, p2), kl_divergence(p2, p1)), 0.5))
    return out


def total_loss(ce, ssl, beta: float):
    """Compose the objective; works on floats (reporting) and tensors (training)."""
    if beta < 0:
        raise ContractError(f"regularizer weight must be >= 0, got {beta}")
    if isinstance(ce, Tensor):
        total = ce
        if ssl and beta != 0.0:
            acc = ssl[0]
            for s in ssl[1:]:
                acc = add(acc, s)
            total = add(ce, scale(acc, beta))
        return total
    return ce + beta * sum(ssl)


@dataclass
class LossBreakdown:
    ce: float
    ssl_per_route: list
    total: float


class Adam:
    """Standard Adam with bias correction over a named parameter dict."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is not None and not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}; step aborted")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            v *= b2
            if g is not None:
                m += (1 - b1) * g
                v += (1 - b2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        zero_grads(self.params.values())


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    grads = [p.grad for p in params if p.grad is not None]
    for g in grads:
        total += float((g * g).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for g in grads:
            g *= factor
    return norm


@dataclass
class TrainHyper:
    lr: float = 1e-3
    beta: float = 0.1          # regularizer weight
    rho: float = 0.6           # edge-dropout ratio for the views
    clip_norm: float = 5.0
    ssl_off: bool = False


def train_step(batch: Batch, model: DemiNet, optimizer: Adam, hyper: TrainHyper,
               view_rngs=None, capture: dict | None = None) -> LossBreakdown:
    """One optimization step over a batch; returns the loss breakdown.

    ``capture``, when given, receives the batch's click probabilities under
    ``"click"`` for running-metric bookkeeping.
    """
    from .interest import interest_distributions

    use_ssl = (not hyper.ssl_off) and hyper.beta != 0.0 and model.uses_graph
    view_seeds = None
    if use_ssl:
        rng1, rng2 = view_rngs
        view_seeds = (
            rng1.integers(0, 2**63 - 1, size=batch.size),
            rng2.integers(0, 2**63 - 1, size=batch.size),
        )
    optimizer.zero_grad()
    with Tape() as tape:
        result = model.forward(batch, training=True, view_seeds=view_seeds, rho=hyper.rho)
        ce = bce_mean(result.click, batch.labels)
        if use_ssl:
            p1 = interest_distributions(result.ssl_views[0])
            p2 = interest_distributions(result.ssl_views[1])
            ssl = ssl_loss(p1, p2)
        else:
            ssl = []
        loss = total_loss(ce, ssl, hyper.beta if use_ssl else 0.0)
        backward(loss, tape)
    clip_global_norm(optimizer.params.values(), hyper.clip_norm)
    optimizer.step()
    if capture is not None:
        capture["click"] = result.click.data.copy()
    k_routes = len(model.interest.heads)
    ssl_floats = [s.item() for s in ssl] if ssl else [0.0] * k_routes
    return LossBreakdown(ce=ce.item(), ssl_per_route=ssl_floats, total=loss.item())
