"""
Autodiff Engine
===============

Reverse-mode differentiation over dense float64 numpy arrays.

Every primitive records a backward rule written in terms of other
primitives, so gradients can themselves be differentiated (needed by the
gradient penalty). Sums run left to right along each reduced axis so that
forward passes are bit-identical for identical inputs.

Usage:
    x = DiffTensor(np.ones(3), requires_grad=True)
    with Tape():
        y = reduce_sum(x * x)
    backward(y)          # x.grad == 2 * x
"""

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import threading

import numpy as np


# Errors

class AutodiffError(Exception):
    """Base class for autodiff errors"""


class ShapeMismatch(AutodiffError, ValueError):
    def __init__(self, op: str, *shapes: Tuple[int, ...]):
        super().__init__(f"{op}: incompatible shapes {', '.join(str(tuple(s)) for s in shapes)}")
        self.op = op
        self.shapes = shapes


class NonScalarRoot(AutodiffError):
    pass


class TapeConsumed(AutodiffError):
    pass


# Recording state

class _State(threading.local):
    def __init__(self):
        self.recording = True
        self.tapes: List["Tape"] = []
        self.kink_monitors: List[List[np.ndarray]] = []


_state = _State()


class Tape:
    """
    Ordered record of the operations executed while the tape is active.

    A tape supports one backward pass; `reset()` makes it reusable.
    """

    def __init__(self):
        self.records: List["_Node"] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _state.tapes.append(self)
        return self

    def __exit__(self, *exc):
        _state.tapes.remove(self)
        return False

    def reset(self) -> None:
        self.records.clear()
        self.consumed = False

    def __len__(self) -> int:
        return len(self.records)

    def __repr__(self):
        status = "consumed" if self.consumed else "active"
        return f"Tape({len(self.records)} ops, {status})"


@contextmanager
def no_record() -> Iterator[None]:
    """Run operations without building a backward graph (inference)"""
    previous = _state.recording
    _state.recording = False
    try:
        yield
    finally:
        _state.recording = previous


@contextmanager
def _recording(enabled: bool) -> Iterator[None]:
    previous = _state.recording
    _state.recording = enabled
    try:
        yield
    finally:
        _state.recording = previous


@contextmanager
def kink_monitor() -> Iterator[List[np.ndarray]]:
    """Collect the branch masks of every celu evaluated inside the block"""
    masks: List[np.ndarray] = []
    _state.kink_monitors.append(masks)
    try:
        yield masks
    finally:
        _state.kink_monitors.remove(masks)


# Tensor

@dataclass(eq=False)
class _Node:
    op: str
    inputs: Tuple["DiffTensor", ...]
    backward: Callable[["DiffTensor"], Sequence[Optional["DiffTensor"]]]
    tape: Optional[Tape] = None


ArrayLike = Union["DiffTensor", np.ndarray, float, int, Sequence]


class DiffTensor:
    """A float64 array with an optional gradient and backward-graph record"""

    __array_priority__ = 1000

    def __init__(self, values, requires_grad: bool = False):
        self.values: np.ndarray = np.array(values, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node: Optional[_Node] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def T(self) -> "DiffTensor":
        return transpose(self)

    def item(self) -> float:
        if self.size != 1:
            raise NonScalarRoot(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def sum(self, axis=None, keepdims: bool = False) -> "DiffTensor":
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "DiffTensor":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "DiffTensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return neg(self)
    def __truediv__(self, other): return mul(self, power(as_tensor(other), -1.0))
    def __rtruediv__(self, other): return mul(other, power(self, -1.0))
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"DiffTensor(shape={self.shape}{flag})"


def as_tensor(x: ArrayLike) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(x)


def parameter(values) -> DiffTensor:
    """Leaf tensor that accumulates gradients"""
    return DiffTensor(values, requires_grad=True)


def _result(values: np.ndarray, op: str, inputs: Sequence[DiffTensor],
            backward: Callable[[DiffTensor], Sequence[Optional[DiffTensor]]]) -> DiffTensor:
    out = DiffTensor(values)
    if _state.recording and any(t.requires_grad for t in inputs):
        tape = _state.tapes[-1] if _state.tapes else None
        out.requires_grad = True
        out.node = _Node(op, tuple(inputs), backward, tape)
        if tape is not None:
            tape.records.append(out.node)
    return out


# Shape helpers

def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted({a % ndim for a in axis}))


def _unbroadcast(g: DiffTensor, shape: Tuple[int, ...]) -> DiffTensor:
    """Sum g down to `shape` (adjoint of broadcasting)"""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = reduce_sum(g, tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = reduce_sum(g, axes, keepdims=True)
    return g


def _ordered_sum(values: np.ndarray, axes: Tuple[int, ...], keepdims: bool) -> np.ndarray:
    out = values
    for ax in sorted(axes, reverse=True):
        length = out.shape[ax]
        if length == 0:
            acc = np.zeros(out.shape[:ax] + out.shape[ax + 1:])
        else:
            acc = np.array(np.take(out, 0, axis=ax), copy=True)
            for k in range(1, length):
                acc = acc + np.take(out, k, axis=ax)
        out = np.expand_dims(acc, ax) if keepdims else acc
    return np.asarray(out, dtype=np.float64)


# Primitives

def add(a: ArrayLike, b: ArrayLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        values = a.values + b.values
    except ValueError:
        raise ShapeMismatch("add", a.shape, b.shape) from None
    return _result(values, "add", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        values = a.values - b.values
    except ValueError:
        raise ShapeMismatch("sub", a.shape, b.shape) from None
    return _result(values, "sub", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)))


def neg(a: ArrayLike) -> DiffTensor:
    a = as_tensor(a)
    return _result(-a.values, "neg", (a,), lambda g: (neg(g),))


def mul(a: ArrayLike, b: ArrayLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        values = a.values * b.values
    except ValueError:
        raise ShapeMismatch("mul", a.shape, b.shape) from None
    return _result(values, "mul", (a, b),
                   lambda g: (_unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)))


def matmul(a: ArrayLike, b: ArrayLike) -> DiffTensor:
    """(..., k) @ (k, p) -> (..., p); b must be a matrix"""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    k, p = b.shape

    def backward(g):
        ga = matmul(g, transpose(b))
        gb = matmul(transpose(reshape(a, (-1, k))), reshape(g, (-1, p)))
        return ga, gb

    return _result(np.matmul(a.values, b.values), "matmul", (a, b), backward)


def reduce_sum(x: ArrayLike, axis=None, keepdims: bool = False) -> DiffTensor:
    x = as_tensor(x)
    if x.ndim == 0:
        return _result(x.values.copy(), "sum", (x,), lambda g: (g,))
    if axis is not None and any(not -x.ndim <= a < x.ndim for a in ((axis,) if isinstance(axis, int) else axis)):
        raise ShapeMismatch(f"sum over axis {axis}", x.shape)
    axes = _normalize_axes(axis, x.ndim)
    values = _ordered_sum(x.values, axes, keepdims)
    kept_shape = tuple(1 if i in axes else s for i, s in enumerate(x.shape))

    def backward(g):
        return (broadcast_to(reshape(g, kept_shape), x.shape),)

    return _result(values, "sum", (x,), backward)


def mean(x: ArrayLike, axis=None, keepdims: bool = False) -> DiffTensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim) if x.ndim else ()
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ShapeMismatch("mean of empty axis", x.shape)
    return mul(reduce_sum(x, axis, keepdims), 1.0 / count)


def dot(a: ArrayLike, b: ArrayLike) -> DiffTensor:
    return reduce_sum(mul(a, b))


def reshape(x: ArrayLike, shape: Tuple[int, ...]) -> DiffTensor:
    x = as_tensor(x)
    try:
        values = x.values.reshape(shape)
    except ValueError:
        raise ShapeMismatch("reshape", x.shape, tuple(shape)) from None
    return _result(values, "reshape", (x,), lambda g: (reshape(g, x.shape),))


def expand_dims(x: ArrayLike, axis: int) -> DiffTensor:
    x = as_tensor(x)
    return reshape(x, np.expand_dims(x.values, axis).shape)


def broadcast_to(x: ArrayLike, shape: Tuple[int, ...]) -> DiffTensor:
    x = as_tensor(x)
    try:
        values = np.array(np.broadcast_to(x.values, shape))
    except ValueError:
        raise ShapeMismatch("broadcast_to", x.shape, tuple(shape)) from None
    return _result(values, "broadcast_to", (x,), lambda g: (_unbroadcast(g, x.shape),))


def transpose(x: ArrayLike, axes: Optional[Sequence[int]] = None) -> DiffTensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeMismatch(f"transpose{axes}", x.shape)
    inverse = tuple(np.argsort([a % x.ndim for a in axes]))
    return _result(np.transpose(x.values, axes), "transpose", (x,), lambda g: (transpose(g, inverse),))


def swapaxes(x: ArrayLike, a: int, b: int) -> DiffTensor:
    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> DiffTensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeMismatch("concat of nothing")
    try:
        values = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatch("concat", *(t.shape for t in tensors)) from None
    ax = axis % values.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        grads = []
        for start, stop in zip(bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[ax] = slice(int(start), int(stop))
            grads.append(getitem(g, tuple(index)))
        return grads

    return _result(values, "concat", tensors, backward)


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> DiffTensor:
    return concat([expand_dims(t, axis) for t in tensors], axis=axis)


def getitem(x: ArrayLike, index) -> DiffTensor:
    """Slicing and integer-array indexing; the adjoint is `scatter`"""
    x = as_tensor(x)
    try:
        values = np.array(x.values[index])
    except IndexError:
        raise ShapeMismatch(f"index {index!r}", x.shape) from None
    return _result(values, "getitem", (x,), lambda g: (scatter(g, index, x.shape),))


def scatter(g: ArrayLike, index, shape: Tuple[int, ...]) -> DiffTensor:
    """Zeros of `shape` with g added at `index`"""
    g = as_tensor(g)
    values = np.zeros(shape)
    np.add.at(values, index, g.values)
    return _result(values, "scatter", (g,), lambda gg: (getitem(gg, index),))


def exp(x: ArrayLike) -> DiffTensor:
    x = as_tensor(x)
    return _result(np.exp(x.values), "exp", (x,), lambda g: (mul(g, exp(x)),))


def power(x: ArrayLike, p: float) -> DiffTensor:
    x = as_tensor(x)
    p = float(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.power(x.values, p)
    return _result(values, "power", (x,), lambda g: (mul(g, mul(p, power(x, p - 1.0))),))


def sqrt(x: ArrayLike) -> DiffTensor:
    return power(x, 0.5)


def celu(x: ArrayLike, alpha: float = 1.0) -> DiffTensor:
    """max(0, x) + min(0, alpha * (exp(x / alpha) - 1))"""
    x = as_tensor(x)
    positive = x.values > 0
    for masks in _state.kink_monitors:
        masks.append(positive.copy())
    values = np.where(positive, x.values, alpha * np.expm1(np.minimum(x.values, 0.0) / alpha))
    mask = positive.astype(np.float64)

    def backward(g):
        # exp of the non-positive part only; exp(x) overflows past x ~ 709
        negative = mul(x, 1.0 - mask)
        slope = add(mask, mul(1.0 - mask, exp(mul(negative, 1.0 / alpha))))
        return (mul(g, slope),)

    return _result(values, "celu", (x,), backward)


def sigmoid(x: ArrayLike) -> DiffTensor:
    x = as_tensor(x)
    values = 0.5 * (1.0 + np.tanh(0.5 * x.values))

    def backward(g):
        s = sigmoid(x)
        return (mul(g, mul(s, sub(1.0, s))),)

    return _result(values, "sigmoid", (x,), backward)


def softmax(x: ArrayLike, axis: int = -1) -> DiffTensor:
    x = as_tensor(x)
    shifted = x.values - np.max(x.values, axis=axis, keepdims=True)
    e = np.exp(shifted)
    values = e / _ordered_sum(e, _normalize_axes(axis, x.ndim), keepdims=True)

    def backward(g):
        s = softmax(x, axis)
        inner = reduce_sum(mul(g, s), axis, keepdims=True)
        return (mul(s, sub(g, inner)),)

    return _result(values, "softmax", (x,), backward)


def detach(x: ArrayLike) -> DiffTensor:
    return DiffTensor(as_tensor(x).values)


def straight_through(hard: np.ndarray, soft: DiffTensor) -> DiffTensor:
    """Forward value `hard`, gradient of `soft`"""
    return add(soft, sub(hard, detach(soft)))


# Backward

def _topological_order(root: DiffTensor) -> List[DiffTensor]:
    order: List[DiffTensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in seen:
            continue
        seen.add(id(tensor))
        stack.append((tensor, True))
        if tensor.node is not None:
            for inp in tensor.node.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def _backpropagate(root: DiffTensor, create_graph: bool) -> Dict[int, DiffTensor]:
    order = _topological_order(root)
    grads: Dict[int, DiffTensor] = {id(root): DiffTensor(np.ones_like(root.values))}
    with _recording(create_graph):
        for tensor in reversed(order):
            g = grads.get(id(tensor))
            if g is None or tensor.node is None:
                continue
            for inp, ig in zip(tensor.node.inputs, tensor.node.backward(g)):
                if ig is None or not inp.requires_grad:
                    continue
                previous = grads.get(id(inp))
                grads[id(inp)] = ig if previous is None else add(previous, ig)
    return grads


def _check_root(root: DiffTensor) -> None:
    if root.size != 1:
        raise NonScalarRoot(f"backward needs a scalar root, got shape {root.shape}")
    if root.node is not None and root.node.tape is not None and root.node.tape.consumed:
        raise TapeConsumed("The tape that recorded this root was already used for a backward pass")


def backward(root: DiffTensor) -> None:
    """Accumulate d(root)/d(leaf) into `.grad` of every tracking leaf"""
    _check_root(root)
    grads = _backpropagate(root, create_graph=False)
    for tensor in _topological_order(root):
        if tensor.node is None and tensor.requires_grad:
            g = grads.get(id(tensor))
            if g is None:
                continue
            tensor.grad = g.values.copy() if tensor.grad is None else tensor.grad + g.values
    if root.node is not None and root.node.tape is not None:
        root.node.tape.consumed = True


def grad(root: DiffTensor, inputs: Sequence[DiffTensor], create_graph: bool = False) -> List[DiffTensor]:
    """
    Gradients of a scalar root with respect to `inputs`, without touching
    `.grad` or consuming the tape. With create_graph the results are
    themselves differentiable.
    """
    _check_root(root)
    grads = _backpropagate(root, create_graph)
    out = []
    for tensor in inputs:
        g = grads.get(id(tensor))
        out.append(DiffTensor(np.zeros_like(tensor.values)) if g is None else g)
    return out


# Gradient checking

@dataclass
class NonSmoothPoint:
    """A coordinate whose finite-difference stencil crosses a kink"""
    index: Tuple[int, ...]


@dataclass
class GradientCheckReport:
    max_rel_error: float
    checked: int
    non_smooth: List[NonSmoothPoint] = field(default_factory=list)
    worst_index: Optional[Tuple[int, ...]] = None

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance

    def __repr__(self):
        return (f"GradientCheckReport(max_rel_error={self.max_rel_error:.3e}, checked={self.checked}, "
                f"non_smooth={len(self.non_smooth)})")


def _same_branches(a: List[np.ndarray], b: List[np.ndarray]) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def gradient_check(f: Callable[[DiffTensor], DiffTensor], x: ArrayLike, step: float = 1e-5) -> GradientCheckReport:
    """
    Compare the analytic gradient of scalar f at x with central differences

    Coordinates where a celu inside f changes branch between x - step and
    x + step are reported as non-smooth and skipped.

    Returns:
        Report with max over checked coordinates of
        |analytic - numeric| / max(1, |analytic|, |numeric|)
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    base = np.array(as_tensor(x).values, dtype=np.float64)
    leaf = DiffTensor(base, requires_grad=True)
    with Tape(), kink_monitor() as base_branches:
        out = f(leaf)
    _check_root(out)
    analytic = grad(out, [leaf])[0].values

    report = GradientCheckReport(max_rel_error=0.0, checked=0)
    for index in np.ndindex(base.shape):
        values = []
        smooth = True
        for sign in (1.0, -1.0):
            shifted = base.copy()
            shifted[index] += sign * step
            with no_record(), kink_monitor() as branches:
                values.append(as_tensor(f(DiffTensor(shifted))).item())
            smooth = smooth and _same_branches(base_branches, branches)
        if not smooth:
            report.non_smooth.append(NonSmoothPoint(index))
            continue
        numeric = (values[0] - values[1]) / (2 * step)
        a = float(analytic[index])
        error = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        report.checked += 1
        if error > report.max_rel_error or report.worst_index is None:
            report.max_rel_error = max(report.max_rel_error, error)
            report.worst_index = index
    return report
