"""Reverse-mode automatic differentiation over dense float64 tensors.

The computation graph is implicit: every tensor produced by an op keeps
references to its parent tensors plus a closure that maps the output
gradient to per-parent gradients. ``backward`` walks that graph once in
reverse topological order and accumulates gradients additively into the
leaves (tensors created with ``requires_grad=True``).

The op set is deliberately small: matmul, add (with row-vector bias
broadcast), sub, mul, neg, scale, transpose, reshape, relu, tanh, log,
softmax_rows, gather, row, concat, reduce_sum, reduce_mean,
cosine_similarity, maximum_const, minimum, clip_const. Everything the
networks in this package need composes from these.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operation received tensors of incompatible shape."""


_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the context (inference mode)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


class Tensor:
    """Dense float64 array with an optional gradient slot.

    Leaves are tensors constructed directly with ``requires_grad=True``;
    after ``backward`` their ``.grad`` holds the partial derivative of the
    loss, accumulating across repeated backward calls until ``zero_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data: np.ndarray = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS: parents appear before children."""
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return topo


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) through the graph rooted at ``loss``.

    ``loss`` must hold a single element. Leaf gradients accumulate
    additively across calls; non-leaf tensors get their latest gradient
    stored for inspection.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    topo = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
            else:
                node.grad = g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul requires 2-D tensors with matching inner dims, got {a.shape} x {b.shape}")

    def bw(g: np.ndarray):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a 1-D bias broadcast over the rows of a matrix."""
    bias_broadcast = a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]
    if not bias_broadcast and a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")

    def bw(g: np.ndarray):
        gb = g.sum(axis=0) if bias_broadcast else g
        return g, gb

    return _result(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub shapes differ: {a.shape} vs {b.shape}")

    def bw(g: np.ndarray):
        return g, -g

    return _result(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")

    def bw(g: np.ndarray):
        return g * b.data, g * a.data

    return _result(a.data * b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _result(a.data * s, (a,), lambda g: (g * s,))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose requires a 2-D tensor, got shape {a.shape}")
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)
    return _result(data.copy(), (a,), lambda g: (g.reshape(a.shape),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g: np.ndarray):
        return (g * mask,)

    return _result(np.where(mask, a.data, 0.0), (a,), bw)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bw(g: np.ndarray):
        return (g * (1.0 - out * out),)

    return _result(out, (a,), bw)


def log(a: Tensor) -> Tensor:
    def bw(g: np.ndarray):
        return (g / a.data,)

    return _result(np.log(a.data), (a,), bw)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows requires a 2-D tensor, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g: np.ndarray):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _result(out, (a,), bw)


def gather(a: Tensor, cols: np.ndarray) -> Tensor:
    """Pick one column per row: out[i] = a[i, cols[i]]."""
    if a.data.ndim != 2:
        raise ShapeError(f"gather requires a 2-D tensor, got shape {a.shape}")
    cols = np.asarray(cols, dtype=np.intp)
    if cols.shape != (a.shape[0],):
        raise ShapeError(f"gather needs one column index per row: {cols.shape} vs {a.shape}")
    rows = np.arange(a.shape[0])

    def bw(g: np.ndarray):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, cols), g)
        return (ga,)

    return _result(a.data[rows, cols], (a,), bw)


def row(a: Tensor, i: int) -> Tensor:
    """Extract row i of a matrix as a 1-D tensor."""
    if a.data.ndim != 2:
        raise ShapeError(f"row requires a 2-D tensor, got shape {a.shape}")

    def bw(g: np.ndarray):
        ga = np.zeros_like(a.data)
        ga[i] = g
        return (ga,)

    return _result(a.data[i].copy(), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    ndim = tensors[0].data.ndim
    if any(t.data.ndim != ndim for t in tensors) or axis >= ndim:
        raise ShapeError(f"concat got incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g: np.ndarray):
        sl = [slice(None)] * ndim
        out = []
        for k in range(len(sizes)):
            sl[axis] = slice(offsets[k], offsets[k + 1])
            out.append(g[tuple(sl)])
        return tuple(out)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    def bw(g: np.ndarray):
        if axis is None:
            return (np.full_like(a.data, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _result(a.data.sum(axis=axis), (a,), bw)


def reduce_mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]

    def bw(g: np.ndarray):
        if axis is None:
            return (np.full_like(a.data, float(g) / count),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape) / count,)

    return _result(a.data.mean(axis=axis), (a,), bw)


def cosine_similarity(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """cos(a, b) with ``eps`` added to each norm so zero vectors stay finite."""
    if a.data.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"cosine_similarity requires equal-length 1-D tensors, got {a.shape} and {b.shape}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    s = float(a.data @ b.data)
    denom = (na + eps) * (nb + eps)
    c = s / denom
    # direction of the norm term; zero vector contributes no norm gradient
    ua = a.data / na if na > 0 else np.zeros_like(a.data)
    ub = b.data / nb if nb > 0 else np.zeros_like(b.data)

    def bw(g: np.ndarray):
        gf = float(g)
        ga = gf * (b.data / denom - (s / (denom * (na + eps))) * ua)
        gb = gf * (a.data / denom - (s / (denom * (nb + eps))) * ub)
        return ga, gb

    return _result(np.float64(c), (a, b), bw)


def maximum_const(a: Tensor, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient passes only where a > floor."""
    mask = a.data > floor

    def bw(g: np.ndarray):
        return (g * mask,)

    return _result(np.maximum(a.data, floor), (a,), bw)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; at ties the gradient routes to the first argument."""
    if a.shape != b.shape:
        raise ShapeError(f"minimum shapes differ: {a.shape} vs {b.shape}")
    take_a = a.data <= b.data

    def bw(g: np.ndarray):
        return g * take_a, g * ~take_a

    return _result(np.minimum(a.data, b.data), (a, b), bw)


def clip_const(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only strictly inside the interval."""
    inside = (a.data > lo) & (a.data < hi)

    def bw(g: np.ndarray):
        return (g * inside,)

    return _result(np.clip(a.data, lo, hi), (a,), bw)


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum a nonempty list of same-shape tensors."""
    total = tensors[0]
    for t in tensors[1:]:
        total = add(total, t)
    return total


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Compare tape gradients of ``loss_fn()`` against central finite differences.

    ``loss_fn`` must rebuild the same scalar loss from the current contents
    of ``params`` on every call. Returns the max over all parameter entries
    of |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
    """
    zero_grads(params)
    backward(loss_fn())
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    max_err = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            gflat = np.asarray(ga, dtype=np.float64).reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                lp = loss_fn().item()
                flat[i] = orig - eps
                lm = loss_fn().item()
                flat[i] = orig
                numeric = (lp - lm) / (2.0 * eps)
                a = gflat[i]
                err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
                if err > max_err:
                    max_err = err
    return max_err
