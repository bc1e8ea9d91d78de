"""Dense float64 tensors with reverse-mode automatic differentiation.

Storage is numpy; differentiation is a per-pass tape. Operations executed
inside a `ComputationTape` context record nodes in creation order, which is
already a topological order, so `backward` is a single reverse sweep.
Operations executed with no active tape run forward-only; that is how frozen
models are evaluated.

The op set is deliberately small: exactly what a span scorer with two-layer
MLP heads and a single-head attention encoder needs, plus the elementwise
pieces the losses are made of. No general broadcasting; `add` supports the
two shapes that actually occur (row bias, scalar offset).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, GradientError

# Probability clamp applied before any log(); keeps losses finite at
# saturation. Gradients are zero outside the clamp band by construction.
EPS_PROB = 1e-12


class Tensor:
    """A float64 array plus the bookkeeping backward() needs."""

    __slots__ = ("data", "requires_grad", "grad", "tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape: "ComputationTape | None" = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single value, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; all routed through the module-level ops
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return NotImplemented

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


_TAPE_STACK: list["ComputationTape"] = []


def _active_tape() -> "ComputationTape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class ComputationTape:
    """Ordered operation record for one forward/backward pass.

    Single-owner: tapes do not nest and `backward` may run exactly once.
    The tape is discarded afterwards; reusing it raises.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._produced: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "ComputationTape":
        if _TAPE_STACK:
            raise GradientError("a tape is already active; tapes do not nest")
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn: Callable) -> None:
        if self._consumed:
            raise GradientError("tape already consumed by backward(); start a new pass")
        self._nodes.append((out, parents, backward_fn))
        self._produced.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every requires_grad leaf's .grad."""
        if self._consumed:
            raise GradientError("backward() already ran on this tape")
        if loss.data.size != 1:
            raise GradientError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
        if id(loss) not in self._produced:
            raise GradientError("loss tensor was not produced on this tape")
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for out, parents, backward_fn in reversed(self._nodes):
            out_grad = grads.pop(id(out), None)
            if out_grad is None:
                continue  # dead branch: no path to the loss
            parent_grads = backward_fn(out_grad)
            for parent, pgrad in zip(parents, parent_grads):
                if pgrad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pgrad
                else:
                    grads[key] = pgrad
                if id(parent) not in self._produced:
                    leaves[key] = parent
        for key, leaf in leaves.items():
            g = grads[key]
            if leaf.grad is None:
                leaf.grad = g.copy()
            else:
                leaf.grad = leaf.grad + g


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss."""
    if loss.tape is None:
        raise GradientError("loss has no tape; run the forward pass inside a ComputationTape")
    loss.tape.backward(loss)


def _make(value: np.ndarray, parents: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    tape = _active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(value, requires_grad=needs)
    if needs:
        for p in parents:
            if p.requires_grad and p.tape is not None and p.tape is not tape:
                raise GradientError("input tensor belongs to a different tape")
        tape._record(out, parents, backward_fn)
        out.tape = tape
    return out


# ---------------------------------------------------------------------------
# core ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul needs 2-D operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    value = a.data @ b.data

    def backward_fn(g: np.ndarray):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(value, (a, b), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    A, B = a.data, b.data
    if A.shape == B.shape:
        def backward_fn(g):
            return g, g
    elif A.ndim == 2 and B.ndim == 1 and A.shape[1] == B.shape[0]:
        # row bias
        def backward_fn(g):
            return g, g.sum(axis=0)
    elif B.size == 1 and A.size >= 1 and B.ndim <= A.ndim:
        def backward_fn(g):
            return g, np.asarray(g.sum()).reshape(B.shape)
    else:
        raise DimensionError(f"add shape mismatch: {A.shape} + {B.shape}")
    return _make(A + B, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"mul shape mismatch: {a.data.shape} * {b.data.shape}")

    def backward_fn(g):
        ga = g * b.data if a.requires_grad else None
        gb = g * a.data if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward_fn)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data + c, (a,), lambda g: (g,))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a 2-D tensor, got shape {a.data.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward_fn(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0), (a,), backward_fn)


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    # two-branch form: never exponentiates a large positive argument
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_values(a.data)

    def backward_fn(g):
        return (g * s * (1.0 - s),)

    return _make(s, (a,), backward_fn)


def log(a: Tensor) -> Tensor:
    def backward_fn(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), backward_fn)


def exp(a: Tensor) -> Tensor:
    value = np.exp(a.data)

    def backward_fn(g):
        return (g * value,)

    return _make(value, (a,), backward_fn)


def power(a: Tensor, exponent: float) -> Tensor:
    """Elementwise a**exponent for a constant exponent >= 0."""
    exponent = float(exponent)
    if exponent < 0:
        raise DimensionError("power() expects a non-negative exponent")

    def backward_fn(g):
        if exponent == 0.0:
            return (np.zeros_like(a.data),)
        return (g * exponent * np.power(a.data, exponent - 1.0),)

    return _make(np.power(a.data, exponent), (a,), backward_fn)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values into [lo, hi]; gradient passes only inside the band."""
    inside = (a.data >= lo) & (a.data <= hi)

    def backward_fn(g):
        return (g * inside,)

    return _make(np.clip(a.data, lo, hi), (a,), backward_fn)


def tsum(a: Tensor) -> Tensor:
    def backward_fn(g):
        return (np.full(a.data.shape, float(g.reshape(()))),)

    return _make(np.asarray(a.data.sum()), (a,), backward_fn)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    if n == 0:
        raise DimensionError("mean of an empty tensor")

    def backward_fn(g):
        return (np.full(a.data.shape, float(g.reshape(())) / n),)

    return _make(np.asarray(a.data.mean()), (a,), backward_fn)


def take_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather rows of a 2-D tensor; duplicate indices accumulate on backward."""
    if a.data.ndim != 2:
        raise DimensionError(f"take_rows needs a 2-D tensor, got shape {a.data.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise DimensionError(
            f"take_rows index out of range for {a.data.shape[0]} rows: "
            f"[{idx.min()}, {idx.max()}]"
        )
    value = a.data[idx]

    def backward_fn(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, idx, g)
        return (acc,)

    return _make(value, (a,), backward_fn)


def take_flat(a: Tensor, flat_indices: Sequence[int]) -> Tensor:
    """Gather elements by row-major flat index into a 1-D tensor."""
    idx = np.asarray(flat_indices, dtype=np.intp)
    flat = a.data.reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= flat.size):
        raise DimensionError(f"take_flat index out of range for {flat.size} elements")
    value = flat[idx]

    def backward_fn(g):
        acc = np.zeros(flat.size, dtype=np.float64)
        np.add.at(acc, idx, g)
        return (acc.reshape(a.data.shape),)

    return _make(value, (a,), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("concat of an empty tensor list")
    if axis not in (0, 1):
        raise DimensionError("concat supports axis 0 or 1")
    value = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        pieces = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if not t.requires_grad:
                pieces.append(None)
            elif axis == 0:
                pieces.append(g[lo:hi])
            else:
                pieces.append(g[:, lo:hi])
        return tuple(pieces)

    return _make(value, tuple(tensors), backward_fn)


def row_softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis of a 2-D tensor; each row sums to 1."""
    if a.data.ndim != 2:
        raise DimensionError(f"row_softmax needs a 2-D tensor, got shape {a.data.shape}")
    x = a.data
    if x.shape[0] == 0:
        s = x.copy()
    else:
        m = x.max(axis=1, keepdims=True)
        e = np.exp(x - m)
        s = e / e.sum(axis=1, keepdims=True)

    def backward_fn(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    return _make(s, (a,), backward_fn)


def logsumexp(a: Tensor) -> Tensor:
    """log(sum(exp(x))) over all elements, computed stably, as a scalar."""
    x = a.data
    if x.size == 0:
        raise DimensionError("logsumexp of an empty tensor")
    m = float(x.max())
    e = np.exp(x - m)
    z = float(e.sum())
    value = np.asarray(m + np.log(z))

    def backward_fn(g):
        return (float(g.reshape(())) * (e / z),)

    return _make(value, (a,), backward_fn)
