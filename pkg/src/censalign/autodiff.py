"""A small reverse-mode autodiff engine over dense numpy arrays.

Each :class:`Tensor` records the op that produced it, its parents and a closure
that pushes its adjoint back to them.  :func:`backward` walks the graph once in
reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name", "_owns_grad")
    # make numpy defer to our reflected operators (ndarray * Tensor -> Tensor)
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _op: str = "leaf"):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self._owns_grad = False
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = _op
        self.name = name

    # shape helpers
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = self.name or self.op
        return f"Tensor({tag}, shape={self.data.shape})"

    def item(self) -> float:
        return float(self.data.item())

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        return mul(self, power(other, -1.0))

    def __rtruediv__(self, other):
        return mul(as_tensor(other), power(self, -1.0))

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return tsum(self, axis, keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req, _parents=tuple(parents) if req else (), _op=op)
    if req:
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        # may alias another node's adjoint; copied before any in-place update
        t.grad = g
        t._owns_grad = False
    else:
        t.grad = t.grad + g
        t._owns_grad = True


# --- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _acc(a, g)
        _acc(b, g)

    return _node(a.data + b.data, (a, b), "add", back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _acc(a, g)
        _acc(b, -g)

    return _node(a.data - b.data, (a, b), "sub", back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), "neg", lambda g: _acc(a, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)

    return _node(a.data * b.data, (a, b), "mul", back)


def power(a, k: float) -> Tensor:
    a = as_tensor(a)
    k = float(k)
    out = a.data**k

    def back(g):
        _acc(a, g * k * a.data ** (k - 1.0))

    return _node(out, (a,), f"pow{k:g}", back)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), "exp", lambda g: _acc(a, g * out))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), "log", lambda g: _acc(a, g / a.data))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _node(np.where(on, a.data, 0.0), (a,), "relu", lambda g: _acc(a, g * on))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _node(out, (a,), "sigmoid", lambda g: _acc(a, g * out * (1.0 - out)))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), "tanh", lambda g: _acc(a, g * (1.0 - out * out)))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.abs(a.data), (a,), "abs", lambda g: _acc(a, g * np.sign(a.data)))


# --- structural -------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    A, B = a.data, b.data

    def back(g):
        if a.requires_grad:
            if B.ndim == 1:
                _acc(a, np.multiply.outer(g, B))
            else:
                _acc(a, g @ B.T)
        if b.requires_grad:
            if A.ndim == 1:
                _acc(b, np.multiply.outer(A, g))
            elif B.ndim == 1:
                _acc(b, A.T @ g)
            else:
                _acc(b, A.T @ g)

    return _node(A @ B, (a, b), "matmul", back)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, shape))

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum", back)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape
    return _node(a.data.reshape(shape), (a,), "reshape", lambda g: _acc(a, g.reshape(old)))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.T, (a,), "transpose", lambda g: _acc(a, g.T))


def index(a, idx) -> Tensor:
    a = as_tensor(a)

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in parts)

    def back(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        elif not a._owns_grad:
            a.grad = np.array(a.grad, copy=True)
        a._owns_grad = True
        if basic:
            a.grad[idx] += g
        else:
            np.add.at(a.grad, idx, g)

    return _node(a.data[idx], (a,), "index", back)


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        for p, piece in zip(parts, np.split(g, bounds, axis=axis)):
            _acc(p, piece)

    return _node(np.concatenate([p.data for p in parts], axis=axis), parts, "concat", back)


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]

    def back(g):
        for i, p in enumerate(parts):
            _acc(p, np.take(g, i, axis=axis))

    return _node(np.stack([p.data for p in parts], axis=axis), parts, "stack", back)


# --- backward pass ----------------------------------------------------------


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def _tag(node: Tensor) -> str:
    return node.name or node.op


def backward(root: Tensor, check_finite: bool = True) -> dict[Tensor, np.ndarray]:
    """Backpropagate from scalar ``root``; return ``{leaf: d root / d leaf}``.

    Leaf ``.grad`` attributes are overwritten, not accumulated across calls.
    """
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.data.shape}")
    order = _topo(root)
    if check_finite and not np.all(np.isfinite(root.data)):
        bad = next(n for n in order if not np.all(np.isfinite(n.data)))
        raise FloatingPointError(f"non-finite value produced by '{_tag(bad)}'")
    for node in order:
        node.grad = None
        node._owns_grad = False
    root.grad = np.ones_like(root.data)
    leaves = {}
    for node in reversed(order):
        if node.grad is None:
            continue
        if node._backward is not None:
            node._backward(node.grad)
        elif node.requires_grad:
            leaves[node] = node.grad
    if check_finite and not all(np.all(np.isfinite(g)) for g in leaves.values()):
        # locate the op closest to the root whose adjoint went bad
        bad = next(n for n in reversed(order) if n.grad is not None and not np.all(np.isfinite(n.grad)))
        raise FloatingPointError(f"non-finite gradient at '{_tag(bad)}'")
    return leaves


def grad(root: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of ``root`` for each tensor in ``params`` (zeros if unreachable)."""
    params = list(params)
    got = backward(root)
    return [got.get(p, np.zeros_like(p.data)) for p in params]


def numerical_grad(fn: Callable[[], float], arrays: Sequence[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of ``fn()`` with respect to each array, perturbed in place."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=float)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn()
            flat[i] = orig - h
            fm = fn()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-3) -> float:
    """Largest elementwise ``|a - b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.size == 0:
        return 0.0
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / den))


def gradcheck(build: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences over ``params``."""
    analytic = grad(build(), params)
    numeric = numerical_grad(lambda: build().item(), [p.data for p in params], h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
