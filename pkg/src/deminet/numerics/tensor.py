"""Dense float64 tensors on a reverse-mode gradient tape.

A ``Tape`` is an append-only list of recorded operations; because entries
are appended in execution order the list is already topologically sorted,
and ``backward`` is a single reverse sweep. Tensors are immutable after
creation except for ``grad``, which accumulates additively until zeroed
explicitly. A tape and the tensors recorded on it belong to one worker.
"""

import numpy as np

from ..errors import ContractError, NumericError

DTYPE = np.float64


def _ensure_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        bad = "NaN" if np.any(np.isnan(arr)) else "Inf"
        raise NumericError(f"{bad} detected at {where} (shape {arr.shape})")


class Tensor:
    """n-dimensional float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        _ensure_finite(arr, f"tensor {name!r}" if name else "tensor creation")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            # copy: g may be a view into (or an alias of) another grad buffer
            self.grad = np.array(g, dtype=DTYPE)
        else:
            self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


class TapeEntry:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations; usable as a context manager."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def record(self, op: str, inputs, output: Tensor, backward_fn) -> None:
        self.entries.append(TapeEntry(op, tuple(inputs), output, backward_fn))

    def __len__(self) -> int:
        return len(self.entries)

    def __enter__(self) -> "Tape":
        push_tape(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        pop_tape(self)


_TAPE_STACK: list[Tape] = []


def push_tape(tape: Tape) -> None:
    _TAPE_STACK.append(tape)


def pop_tape(tape: Tape) -> None:
    top = _TAPE_STACK.pop()
    if top is not tape:
        raise ContractError("tape stack corrupted: exiting a tape that is not on top")


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    Gradients accumulate additively, both across fan-out within the tape and
    across repeated calls; callers zero grads explicitly between steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    loss.accumulate_grad(np.ones_like(loss.data))
    for entry in reversed(tape.entries):
        g = entry.output.grad
        if g is None:
            continue
        for inp, ig in zip(entry.inputs, entry.backward_fn(g)):
            if ig is None or not inp.requires_grad:
                continue
            if inp.grad is not None:
                inp.grad += ig
            elif ig.base is None and ig is not g and ig.dtype == DTYPE:
                # fresh array straight from the closure; adopt without copying
                inp.grad = ig
            else:
                inp.grad = np.array(ig, dtype=DTYPE)


def zero_grads(tensors) -> None:
    """Explicitly reset gradients; nothing else ever clears them."""
    for t in tensors:
        t.zero_grad()
