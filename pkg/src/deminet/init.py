"""Parameter initializers (symmetric uniform for weights, small normal for tables)."""

import numpy as np

from .numerics import Tensor


def xavier_uniform(shape, rng: np.random.Generator, name: str) -> Tensor:
    fan_in, fan_out = (shape[0], shape[-1]) if len(shape) > 1 else (shape[0], shape[0])
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros(shape, name: str) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def ones(shape, name: str) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, name=name)


def embedding_table(shape, rng: np.random.Generator, name: str, std: float = 0.01) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True, name=name)
