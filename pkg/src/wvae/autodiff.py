"""Dense float64 arrays with reverse-mode differentiation.

The op set is deliberately small: enough for multilayer perceptrons, the
Bernoulli/softmax likelihoods and the closed-form Gaussian divergences.
Each op returns a new :class:`Tensor` that remembers its inputs and a
closure mapping the output gradient to input gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

SOFTPLUS_CUTOFF = 30.0
REL_ERR_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class BackwardError(RuntimeError):
    pass


class Tensor:
    """A node in the differentiation graph.

    Leaves are created directly from data; every other node is produced by
    one of the op functions in this module and records ``op`` plus its
    parent nodes.
    """

    __slots__ = ("values", "grad", "op", "parents", "requires_grad", "_backward", "_consumed")

    def __init__(self, values, requires_grad: bool = True):
        self.values = np.array(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)
        self.op = None
        self.parents: tuple[Tensor, ...] = ()
        self.requires_grad = requires_grad
        self._backward: Callable[[np.ndarray], tuple] | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def is_leaf(self) -> bool:
        return self.op is None

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def backward(self) -> None:
        backward(self)

    def reset(self) -> None:
        """Zero every gradient in the graph below this node and re-arm backward."""
        for node in _topological_order(self):
            node.zero_grad()
        self._consumed = False

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    # operator sugar; each maps onto a named op below
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """Leaf that takes part in the forward pass but receives no gradient."""
    return Tensor(x, requires_grad=False)


def _node(values, op, parents, backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = np.zeros_like(values)
    out.op = op
    out.parents = parents
    out.requires_grad = any(p.requires_grad for p in parents)
    out._backward = backward
    out._consumed = False
    return out


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _check_finite(a: Tensor, op: str) -> None:
    if not np.all(np.isfinite(a.values)):
        raise DomainError(f"{op}: non-finite input")


# --- elementwise binary -------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a ``(1, n)`` row added to every row of ``a``."""
    if a.shape == b.shape:
        return _node(a.values + b.values, "add", (a, b), lambda g: (g, g))
    if a.values.ndim == 2 and b.shape == (1, a.shape[1]):
        return _node(
            a.values + b.values, "add", (a, b), lambda g: (g, g.sum(axis=0, keepdims=True))
        )
    raise ShapeError(f"add: cannot combine {a.shape} with {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return _node(a.values - b.values, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    av, bv = a.values, b.values
    return _node(av * bv, "mul", (a, b), lambda g: (g * bv, g * av))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def backward(g):
        return (
            g @ bv.T if a.requires_grad else None,
            av.T @ g if b.requires_grad else None,
        )

    return _node(av @ bv, "matmul", (a, b), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat: no inputs")
    try:
        values = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(values, "concat", tensors, backward)


# --- elementwise unary --------------------------------------------------------


def neg(a: Tensor) -> Tensor:
    return _node(-a.values, "neg", (a,), lambda g: (-g,))


def scale(a: Tensor, k: float) -> Tensor:
    k = float(k)
    return _node(a.values * k, "scale", (a,), lambda g: (g * k,))


def add_scalar(a: Tensor, k: float) -> Tensor:
    return _node(a.values + float(k), "add_scalar", (a,), lambda g: (g,))


def relu(a: Tensor) -> Tensor:
    # subgradient 0 at exactly 0
    mask = a.values > 0
    return _node(np.where(mask, a.values, 0.0), "relu", (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    hi = x > SOFTPLUS_CUTOFF
    lo = x < -SOFTPLUS_CUTOFF
    mid = ~(hi | lo)
    out[hi] = x[hi]
    out[lo] = np.exp(x[lo])
    out[mid] = np.log1p(np.exp(x[mid]))
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.values)
    return _node(s, "sigmoid", (a,), lambda g: (g * s * (1.0 - s),))


def softplus(a: Tensor) -> Tensor:
    s = _sigmoid(a.values)
    return _node(_softplus(a.values), "softplus", (a,), lambda g: (g * s,))


def exp(a: Tensor) -> Tensor:
    _check_finite(a, "exp")
    out = np.exp(a.values)
    return _node(out, "exp", (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    _check_finite(a, "log")
    if np.any(a.values <= 0):
        raise DomainError("log: input must be strictly positive")
    av = a.values
    return _node(np.log(av), "log", (a,), lambda g: (g / av,))


def square(a: Tensor) -> Tensor:
    av = a.values
    return _node(av * av, "square", (a,), lambda g: (2.0 * g * av,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip into ``[lo, hi]``; the gradient is zero wherever the clip is active."""
    av = a.values
    inside = (av > lo) & (av < hi)
    return _node(np.clip(av, lo, hi), "clamp", (a,), lambda g: (g * inside,))


# --- reductions and indexing --------------------------------------------------


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    shape = a.shape
    if axis is None:
        return _node(np.array(a.values.sum()), "sum", (a,), lambda g: (np.full(shape, g),))
    return _node(
        a.values.sum(axis=axis),
        "sum",
        (a,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),),
    )


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.values.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / n)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    av = a.values
    peak = av.max(axis=axis, keepdims=True)
    shifted = np.exp(av - peak)
    total = shifted.sum(axis=axis, keepdims=True)
    out = (np.log(total) + peak).squeeze(axis)
    soft = shifted / total
    return _node(out, "logsumexp", (a,), lambda g: (np.expand_dims(g, axis) * soft,))


def slice_(a: Tensor, index) -> Tensor:
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _node(np.array(a.values[index]), "slice", (a,), backward)


_OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "relu": relu,
    "softplus": softplus,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "square": square,
    "sum": sum_,
    "mean": mean,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis),
    "slice": slice_,
    "clamp": clamp,
    "logsumexp": logsumexp,
}


def forward_op(kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Apply op ``kind`` by name, e.g. ``forward_op("slice", [x], index=(0,))``."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op {kind!r}") from None
    return fn(*inputs, **attrs)


# --- backward -----------------------------------------------------------------


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for every node under ``root``.

    A second call on the same root raises :class:`BackwardError` until
    :meth:`Tensor.reset` is called. Leaves shared between separate graphs
    keep accumulating; zero them between optimizer steps.
    """
    if root.values.size != 1:
        raise BackwardError(f"backward needs a scalar root, got shape {root.shape}")
    if root._consumed:
        raise BackwardError("backward already ran on this graph; call reset() first")
    order = _topological_order(root)
    root.grad = np.ones_like(root.values)
    for node in reversed(order):
        if node._backward is None or not node.requires_grad:
            continue
        for parent, g in zip(node.parents, node._backward(node.grad)):
            if g is not None and parent.requires_grad:
                parent.grad += g
    root._consumed = True


# --- finite-difference checking ------------------------------------------------


@dataclass
class GradCheckReport:
    max_relative_error: float
    per_parameter_errors: list[float] = field(default_factory=list)

    def passed(self, tol: float) -> bool:
        return self.max_relative_error < tol


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must rebuild its graph from the current ``params`` values on each
    call. With ``max_coords`` only that many randomly chosen coordinates of
    each parameter are perturbed.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    for p in params:
        p.zero_grad()
    root = f()
    if not np.all(np.isfinite(root.values)):
        raise DomainError("grad_check: f evaluated to a non-finite value")
    backward(root)
    analytic = [p.grad.copy() for p in params]
    rng = rng or np.random.default_rng(0)

    errors = []
    for p, a in zip(params, analytic):
        flat = p.values.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise DomainError("grad_check: f evaluated to a non-finite value")
            numeric = (up - down) / (2 * h)
            ana = a.reshape(-1)[i]
            denom = max(abs(ana), abs(numeric), REL_ERR_FLOOR)
            worst = max(worst, abs(ana - numeric) / denom)
        errors.append(worst)
    return GradCheckReport(max(errors, default=0.0), errors)
