"""Reverse-mode autodiff substrate.

A Tape is an ordered list of backward closures appended during the forward
pass; since every operation's inputs exist before its output, forward order
is a topological order and the backward pass is one reversed sweep that
visits each record exactly once. Gradients accumulate additively on the
``grad`` slot of each tensor and are never mutated in place, so a gradient
array may be shared between records safely.

Tensors carry float64 data by default so quantization is the only
low-precision effect anywhere in the lab; float32 is available through
``set_default_dtype`` for anyone who wants to study the difference.

One tape belongs to one training step (single writer). Independent tapes,
for example parallel learning-rate sweep cells, never share state: the
active tape is tracked per execution context.
"""

from __future__ import annotations

import contextvars

import numpy as np

from fp4lab.errors import NumericsError

_ACTIVE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "fp4lab_active_tape", default=None
)

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"default dtype must be float32 or float64, got {dt}")
    _DEFAULT_DTYPE = dt.type


def default_dtype():
    return _DEFAULT_DTYPE


def active_tape() -> "Tape | None":
    return _ACTIVE.get()


def ensure_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{op} produced non-finite values")
    return arr


class Tensor:
    """A dense array plus a gradient slot and graph metadata."""

    __slots__ = ("data", "grad", "requires_grad", "name", "tape_id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.tape_id: int | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar; the implementations live in ops.py and are bound at
    # import time by _register_operators below.


class Tape:
    """Ordered operation records for one forward pass."""

    __slots__ = ("records", "_token")

    def __init__(self):
        self.records: list = []
        self._token = None

    def __enter__(self) -> "Tape":
        if self._token is not None:
            raise RuntimeError("tape is already active")
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.reset(self._token)
        self._token = None
        return False

    def record(self, out: Tensor, backward) -> None:
        out.tape_id = len(self.records)
        self.records.append(backward)

    def backward(self, loss: Tensor) -> None:
        """Run one reverse sweep seeding d(loss)/d(loss) = 1."""
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        ensure_finite(loss.data, "loss")
        loss.grad = np.ones_like(loss.data)
        for fn in reversed(self.records):
            fn()


def _register_operators():
    from . import ops

    Tensor.__add__ = lambda a, b: ops.add(a, b)
    Tensor.__radd__ = lambda a, b: ops.add(a, b)
    Tensor.__sub__ = lambda a, b: ops.sub(a, b)
    Tensor.__neg__ = lambda a: ops.neg(a)
    Tensor.__mul__ = lambda a, b: ops.mul(a, b)
    Tensor.__rmul__ = lambda a, b: ops.mul(a, b)
    Tensor.__truediv__ = lambda a, b: ops.mul(a, 1.0 / b)
    Tensor.__matmul__ = lambda a, b: ops.matmul(a, b)
