"""Dense float64 tensors with define-by-run reverse-mode differentiation.

A :class:`Tape` records every primitive applied to tensors that require
gradients while it is active.  :func:`backward` walks the record in reverse
and accumulates adjoints.  Outside an active tape the same primitives run as
plain numpy code, so evaluation and training share one arithmetic path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("tanh", "relu", "sin", "srelu")


class DimensionError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class NumericError(ArithmeticError):
    pass


class Tensor:
    """A float64 array plus the bookkeeping reverse mode needs.

    ``checked`` rejects NaN/Inf at construction.  Intermediates built by the
    primitives skip the check; only user-facing construction pays for it.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 checked: bool = True):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if checked and not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; all of these go through the recorded primitives
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


@dataclass
class Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; nested tapes are allowed and only the innermost
    one records.
    """

    nodes: list[Node] = field(default_factory=list)
    leaves: list[Tensor] = field(default_factory=list)
    _leaf_ids: set[int] = field(default_factory=set, repr=False)
    _out_ids: set[int] = field(default_factory=set, repr=False)

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp) -> None:
        for t in inputs:
            if t.requires_grad and id(t) not in self._out_ids and id(t) not in self._leaf_ids:
                self._leaf_ids.add(id(t))
                self.leaves.append(t)
        self.nodes.append(Node(out, inputs, vjp))
        self._out_ids.add(id(out))


_ACTIVE: list[Tape] = []


def _emit(value: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs and bool(_ACTIVE), checked=False)
    if out.requires_grad:
        _ACTIVE[-1].record(out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- primitives

def add(a: Tensor, b: Tensor) -> Tensor:
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _emit(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return _emit(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def affine_forward(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight (+ bias)`` for ``x`` of shape (batch, n_in)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"input {x.shape} does not conform to weight {weight.shape}")
    if bias is None:
        return _emit(x.data @ weight.data, (x, weight),
                     lambda g: (g @ weight.data.T, x.data.T @ g))
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"bias {bias.shape} does not conform to weight {weight.shape}")
    return _emit(x.data @ weight.data + bias.data, (x, weight, bias),
                 lambda g: (g @ weight.data.T, x.data.T @ g, g.sum(axis=0)))


def activation_forward(x: Tensor, kind: str) -> Tensor:
    z = x.data
    if kind == "tanh":
        y = np.tanh(z)
        return _emit(y, (x,), lambda g: (g * (1.0 - y * y),))
    if kind == "relu":
        y = np.maximum(z, 0.0)
        return _emit(y, (x,), lambda g: (g * (z > 0.0),))
    if kind == "sin":
        return _emit(np.sin(z), (x,), lambda g: (g * np.cos(z),))
    if kind == "srelu":
        # relu(z) * relu(1 - z); derivative 1 - 2z on (0, 1), zero elsewhere
        inside = (z > 0.0) & (z < 1.0)
        y = np.where(inside, z * (1.0 - z), 0.0)
        return _emit(y, (x,), lambda g: (g * np.where(inside, 1.0 - 2.0 * z, 0.0),))
    raise ConfigurationError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    if len(parts) == 1:
        return parts[0]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]
    return _emit(np.concatenate([p.data for p in parts], axis=axis), tuple(parts),
                 lambda g: tuple(np.split(g, bounds, axis=axis)))


def columns(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``x[:, start:stop]``."""
    n = x.shape[1]

    def vjp(g):
        full = np.zeros((x.shape[0], n))
        full[:, start:stop] = g
        return (full,)

    return _emit(x.data[:, start:stop], (x,), vjp)


def transpose(x: Tensor) -> Tensor:
    return _emit(x.data.T, (x,), lambda g: (g.T,))


def total(x: Tensor) -> Tensor:
    return _emit(np.asarray(x.data.sum()), (x,), lambda g: (np.full(x.shape, np.asarray(g).item()),))


def mean_square(x: Tensor) -> Tensor:
    n = x.size
    return _emit(np.asarray(np.mean(x.data * x.data)), (x,),
                 lambda g: (x.data * (2.0 * np.asarray(g).item() / n),))


# ---------------------------------------------------------------- reverse pass

def backward(tape: Tape, output: Tensor) -> dict[int, np.ndarray]:
    """Propagate adjoints from a scalar ``output`` back through ``tape``.

    Every leaf recorded on the tape gets its ``.grad`` set (zeros when it did
    not influence ``output``).  Returns ``{id(leaf): adjoint}``.
    """
    if output.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    adj: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for node in reversed(tape.nodes):
        g = adj.pop(id(node.out), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in adj:
                adj[key] = adj[key] + gi
            else:
                adj[key] = gi
    out = {}
    for leaf in tape.leaves:
        g = adj.get(id(leaf))
        leaf.grad = np.zeros_like(leaf.data) if g is None else np.asarray(g).reshape(leaf.shape)
        out[id(leaf)] = leaf.grad
    return out


def gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor]) -> tuple[float, list[np.ndarray]]:
    """Run ``loss_fn`` on a fresh tape and return (loss, grads aligned with params)."""
    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss)
    grads = []
    for p in params:
        grads.append(p.grad if p.grad is not None and id(p) in tape._leaf_ids
                     else np.zeros_like(p.data))
    return loss.item(), grads


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
               reference: Callable[[list[np.ndarray]], float] | None = None) -> float:
    """Max relative discrepancy between autodiff and central differences.

    The differences are taken on ``loss_fn`` itself (parameters perturbed in
    place and restored) unless ``reference`` is given.  ``reference`` receives
    extended-precision copies of the parameter arrays and must return the same
    loss; it exists because float64 differencing noise, roughly
    eps * |loss| / h, swamps gradient entries near 1e-7.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ConfigurationError(f"step h={h} outside [1e-7, 1e-3]")
    loss, grads = gradients(loss_fn, params)
    if not np.isfinite(loss):
        raise NumericError("loss is not finite")
    if reference is None:
        arrays = [p.data for p in params]
        step = h

        def evaluate():
            return loss_fn().item()
    else:
        arrays = [p.data.astype(np.longdouble) for p in params]
        step = np.longdouble(h)

        def evaluate():
            return reference(arrays)

    worst = 0.0
    for arr, g in zip(arrays, grads):
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = flat[i]
            fp = evaluate()
            flat[i] = orig - step
            down = flat[i]
            fm = evaluate()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError("loss is not finite under perturbation")
            # divide by the step actually taken, not the nominal 2h
            fd = float((fp - fm) / (up - down))
            worst = max(worst, abs(gflat[i] - fd) / (abs(fd) + 1e-12))
    return worst
