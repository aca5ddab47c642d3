"""Finite-difference verification of tape gradients."""

import numpy as np

from ..errors import ContractError
from .tensor import Tape, Tensor, backward


def _eval_scalar(f, x: Tensor) -> float:
    out = f(x)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ContractError("check_gradients needs f to return a scalar tensor")
    return out.item()


def check_gradients(f, x: Tensor, step: float = 1e-5) -> float:
    """Compare analytic d f/d x against central differences.

    Returns the max over coordinates of |analytic - numeric| / max(1, |analytic|).
    ``f`` must be deterministic; ``x`` is perturbed in place and restored.
    """
    if step <= 0:
        raise ContractError(f"step must be positive, got {step}")
    x.zero_grad()
    with Tape() as tape:
        out = f(x)
        if not isinstance(out, Tensor) or out.size != 1:
            raise ContractError("check_gradients needs f to return a scalar tensor")
        backward(out, tape)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.zero_grad()

    flat = x.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = _eval_scalar(f, x)
        flat[i] = orig - step
        f_minus = _eval_scalar(f, x)
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * step)
        a = analytic.reshape(-1)[i]
        err = abs(a - numeric) / max(1.0, abs(a))
        if err > worst:
            worst = err
    return worst


def check_parameter_gradients(loss_fn, params: dict, step: float = 1e-5) -> dict:
    """Run ``check_gradients`` for every named parameter of a model.

    ``loss_fn`` takes no arguments and recomputes the scalar loss from the
    current parameter values. Returns {name: max_relative_error}.
    """
    errors = {}
    for name, p in params.items():
        errors[name] = check_gradients(lambda _t, fn=loss_fn: fn(), p, step=step)
    return errors
