"""Dense float64 tensors with reverse-mode automatic differentiation.

Every model equation is expressed through the op set in this module. Ops
compute eagerly, record a backward rule, and ``backward`` replays those
rules in reverse topological order. ``ParameterStore`` owns named leaf
nodes and ``Adamax`` updates them in place.

Design constraints honoured throughout:

* all values are 64-bit floats in row-major order,
* no implicit broadcasting beyond scalar-with-tensor,
* every op output is checked for NaN/Inf and raises ``NumericError``
  instead of propagating garbage.
"""

from __future__ import annotations

from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "NumericError",
    "Tensor",
    "GraphNode",
    "constant",
    "matmul",
    "matvec",
    "transpose",
    "add",
    "sub",
    "mul",
    "relu",
    "tanh",
    "sigmoid",
    "log",
    "clip",
    "softmax",
    "concat",
    "stack",
    "reshape",
    "slice_axis",
    "element",
    "take_rows",
    "max_pool",
    "sum_all",
    "dot",
    "backward",
    "ParameterStore",
    "Adamax",
]


class DimensionError(ValueError):
    """Operands do not satisfy an op's shape contract."""


class NumericError(ArithmeticError):
    """A NaN or Inf appeared where finite math is required."""


class Tensor:
    """Dense row-major float64 array, the value type of every graph node."""

    __slots__ = ("array",)

    def __init__(self, array) -> None:
        arr = np.asarray(array, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            # ascontiguousarray would flatten 0-d arrays, so only call it
            # when a copy is actually required.
            arr = np.ascontiguousarray(arr)
        self.array = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the elements."""
        return self.array.reshape(-1)

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls(np.zeros(shape))

    def copy(self) -> "Tensor":
        return Tensor(self.array.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class GraphNode:
    """One computation-graph node: a value plus its local backward rule.

    ``gradient`` is allocated lazily: it stays ``None`` until a backward
    pass (or ``ParameterStore.zero_grad``) touches the node.
    """

    __slots__ = ("value", "gradient", "parents", "name", "trainable",
                 "_backward", "_backward_ran")

    def __init__(self, value, parents: tuple = (), backward=None,
                 name: str = "", trainable: bool = False) -> None:
        self.value = value if isinstance(value, Tensor) else Tensor(value)
        self.gradient: np.ndarray | None = None
        self.parents: tuple[GraphNode, ...] = tuple(parents)
        self.name = name
        self.trainable = trainable
        self._backward: Callable[[np.ndarray], None] | None = backward
        self._backward_ran = False

    def accumulate(self, grad: np.ndarray) -> None:
        if self.gradient is None:
            self.gradient = np.zeros(self.value.shape)
        self.gradient += grad

    # Operator sugar for the elementwise binary ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __repr__(self) -> str:
        tag = self.name or "node"
        return f"GraphNode({tag}, shape={self.value.shape})"


def _node(array: np.ndarray, parents: tuple, rule, name: str) -> GraphNode:
    arr = np.asarray(array, dtype=np.float64)
    # A scalar sum is NaN/Inf whenever any element is (finite overflow of
    # the sum itself would equally signal a diverged computation), and is
    # far cheaper than an elementwise isfinite scan on the hot path.
    if not np.isfinite(arr.sum()):
        if arr.size and np.all(np.isfinite(arr)):
            raise NumericError(f"magnitude overflow in {name}")
        raise NumericError(f"non-finite values produced by {name}")
    return GraphNode(Tensor(arr), parents, rule, name)


def constant(array, name: str = "const") -> GraphNode:
    """Leaf node with no parents; gradients may flow in but are unused."""
    return _node(np.asarray(array, dtype=np.float64), (), None, name)


def _is_scalar_shape(shape: tuple[int, ...]) -> bool:
    return shape == ()


def _coerce(x) -> GraphNode:
    if isinstance(x, GraphNode):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return constant(np.asarray(float(x)))
    raise TypeError(f"expected GraphNode or scalar, got {type(x).__name__}")


def _binary_shapes(a: GraphNode, b: GraphNode, op: str) -> None:
    sa, sb = a.value.shape, b.value.shape
    if sa != sb and not _is_scalar_shape(sa) and not _is_scalar_shape(sb):
        raise DimensionError(f"{op}: shapes {sa} and {sb} differ and neither is scalar")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Only needed for the scalar-with-tensor case.
    if shape == () and grad.shape != ():
        return np.asarray(grad.sum())
    return grad


def matmul(a: GraphNode, b: GraphNode) -> GraphNode:
    """Matrix product of two rank-2 tensors [m,k] @ [k,n] -> [m,n]."""
    av, bv = a.value.array, b.value.array
    if av.ndim != 2 or bv.ndim != 2:
        raise DimensionError(f"matmul: expected matrices, got {av.shape} and {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {av.shape} vs {bv.shape}")

    def rule(g: np.ndarray) -> None:
        a.accumulate(g @ bv.T)
        b.accumulate(av.T @ g)

    return _node(av @ bv, (a, b), rule, "matmul")


def matvec(w: GraphNode, x: GraphNode) -> GraphNode:
    """Matrix-vector product [m,k] @ [k] -> [m]."""
    wv, xv = w.value.array, x.value.array
    if wv.ndim != 2 or xv.ndim != 1 or wv.shape[1] != xv.shape[0]:
        raise DimensionError(f"matvec: shapes {wv.shape} and {xv.shape} do not compose")

    def rule(g: np.ndarray) -> None:
        w.accumulate(np.outer(g, xv))
        x.accumulate(wv.T @ g)

    return _node(wv @ xv, (w, x), rule, "matvec")


def transpose(x: GraphNode) -> GraphNode:
    xv = x.value.array
    if xv.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got {xv.shape}")

    def rule(g: np.ndarray) -> None:
        x.accumulate(g.T)

    return _node(xv.T, (x,), rule, "transpose")


def add(a, b) -> GraphNode:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "add")

    def rule(g: np.ndarray) -> None:
        a.accumulate(_reduce_to(g, a.value.shape))
        b.accumulate(_reduce_to(g, b.value.shape))

    return _node(a.value.array + b.value.array, (a, b), rule, "add")


def sub(a, b) -> GraphNode:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "sub")

    def rule(g: np.ndarray) -> None:
        a.accumulate(_reduce_to(g, a.value.shape))
        b.accumulate(_reduce_to(-g, b.value.shape))

    return _node(a.value.array - b.value.array, (a, b), rule, "sub")


def mul(a, b) -> GraphNode:
    """Hadamard (or scalar) product."""
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "mul")
    av, bv = a.value.array, b.value.array

    def rule(g: np.ndarray) -> None:
        a.accumulate(_reduce_to(g * bv, a.value.shape))
        b.accumulate(_reduce_to(g * av, b.value.shape))

    return _node(av * bv, (a, b), rule, "mul")


def relu(x: GraphNode) -> GraphNode:
    xv = x.value.array

    def rule(g: np.ndarray) -> None:
        x.accumulate(g * (xv > 0))

    return _node(np.maximum(xv, 0.0), (x,), rule, "relu")


def tanh(x: GraphNode) -> GraphNode:
    y = np.tanh(x.value.array)

    def rule(g: np.ndarray) -> None:
        x.accumulate(g * (1.0 - y * y))

    return _node(y, (x,), rule, "tanh")


def sigmoid(x: GraphNode) -> GraphNode:
    xv = x.value.array
    # Stable in both tails: never exponentiates a positive argument.
    y = np.empty_like(xv, dtype=np.float64)
    pos = xv >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    ex = np.exp(xv[~pos])
    y[~pos] = ex / (1.0 + ex)

    def rule(g: np.ndarray) -> None:
        x.accumulate(g * y * (1.0 - y))

    return _node(y, (x,), rule, "sigmoid")


def log(x: GraphNode) -> GraphNode:
    xv = x.value.array

    def rule(g: np.ndarray) -> None:
        x.accumulate(g / xv)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xv)
    return _node(out, (x,), rule, "log")


def clip(x: GraphNode, lo: float, hi: float) -> GraphNode:
    """Clamp to [lo, hi]; gradient passes through strictly inside the range."""
    xv = x.value.array
    inside = (xv > lo) & (xv < hi)

    def rule(g: np.ndarray) -> None:
        x.accumulate(g * inside)

    return _node(np.clip(xv, lo, hi), (x,), rule, "clip")


def softmax(x: GraphNode, axis: int = -1) -> GraphNode:
    """Max-subtracted softmax along ``axis``; the axis must be non-empty."""
    xv = x.value.array
    if xv.ndim == 0 or xv.shape[axis] == 0:
        raise DimensionError(f"softmax: empty axis {axis} for shape {xv.shape}")
    shifted = xv - xv.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def rule(g: np.ndarray) -> None:
        inner = (g * y).sum(axis=axis, keepdims=True)
        x.accumulate(y * (g - inner))

    return _node(y, (x,), rule, "softmax")


def concat(parts: Sequence[GraphNode], axis: int = 0) -> GraphNode:
    """Concatenate along ``axis``; all other dimensions must agree."""
    if not parts:
        raise DimensionError("concat: no parts given")
    ndim = parts[0].value.array.ndim
    for p in parts:
        pv = p.value.array
        if pv.ndim != ndim:
            raise DimensionError("concat: parts have different ranks")
        for d in range(ndim):
            if d != axis % ndim and pv.shape[d] != parts[0].value.shape[d]:
                raise DimensionError(
                    f"concat: shape {pv.shape} incompatible with {parts[0].value.shape}"
                    f" along non-axis dimension {d}")
    sizes = [p.value.array.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)
    parts = tuple(parts)

    def rule(g: np.ndarray) -> None:
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, stop)
            p.accumulate(g[tuple(idx)])

    return _node(np.concatenate([p.value.array for p in parts], axis=axis),
                 parts, rule, "concat")


def stack(parts: Sequence[GraphNode]) -> GraphNode:
    """Stack equal-shaped tensors along a new leading axis."""
    if not parts:
        raise DimensionError("stack: no parts given")
    shape = parts[0].value.shape
    for p in parts:
        if p.value.shape != shape:
            raise DimensionError(f"stack: shape {p.value.shape} differs from {shape}")
    parts = tuple(parts)

    def rule(g: np.ndarray) -> None:
        for i, p in enumerate(parts):
            p.accumulate(g[i])

    return _node(np.stack([p.value.array for p in parts]), parts, rule, "stack")


def reshape(x: GraphNode, shape) -> GraphNode:
    xv = x.value.array
    out = xv.reshape(shape)

    def rule(g: np.ndarray) -> None:
        x.accumulate(g.reshape(xv.shape))

    return _node(out, (x,), rule, "reshape")


def slice_axis(x: GraphNode, axis: int, start: int, stop: int) -> GraphNode:
    """Contiguous slice along one axis; backward zero-embeds the gradient."""
    xv = x.value.array
    if not (0 <= start <= stop <= xv.shape[axis]):
        raise DimensionError(
            f"slice_axis: [{start}:{stop}] out of range for shape {xv.shape} axis {axis}")
    idx = [slice(None)] * xv.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def rule(g: np.ndarray) -> None:
        full = np.zeros(xv.shape)
        full[idx] = g
        x.accumulate(full)

    return _node(xv[idx], (x,), rule, "slice")


def element(x: GraphNode, i: int) -> GraphNode:
    """Scalar element of a vector, as a 0-d node."""
    xv = x.value.array
    if xv.ndim != 1 or not (0 <= i < xv.shape[0]):
        raise DimensionError(f"element: index {i} invalid for shape {xv.shape}")

    def rule(g: np.ndarray) -> None:
        full = np.zeros(xv.shape)
        full[i] = g
        x.accumulate(full)

    return _node(xv[i], (x,), rule, "element")


def take_rows(table: GraphNode, indices: Sequence[int]) -> GraphNode:
    """Gather rows of a matrix; backward scatter-adds into the table."""
    tv = table.value.array
    if tv.ndim != 2:
        raise DimensionError(f"take_rows: expected a matrix, got {tv.shape}")
    idx = np.asarray(list(indices), dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= tv.shape[0]):
        raise DimensionError(f"take_rows: index out of range for {tv.shape[0]} rows")

    def rule(g: np.ndarray) -> None:
        full = np.zeros(tv.shape)
        np.add.at(full, idx, g)
        table.accumulate(full)

    return _node(tv[idx], (table,), rule, "take_rows")


def max_pool(x: GraphNode) -> GraphNode:
    """Column-wise max of a [n,d] matrix; ties route gradient to the first
    maximal row."""
    xv = x.value.array
    if xv.ndim != 2 or xv.shape[0] == 0:
        raise DimensionError(f"max_pool: need a non-empty matrix, got {xv.shape}")
    argmax = xv.argmax(axis=0)
    cols = np.arange(xv.shape[1])

    def rule(g: np.ndarray) -> None:
        full = np.zeros(xv.shape)
        full[argmax, cols] = g
        x.accumulate(full)

    return _node(xv[argmax, cols], (x,), rule, "max_pool")


def sum_all(x: GraphNode) -> GraphNode:
    """Sum of all elements, as a 0-d scalar node."""
    xv = x.value.array

    def rule(g: np.ndarray) -> None:
        x.accumulate(np.full(xv.shape, float(g)))

    return _node(np.asarray(xv.sum()), (x,), rule, "sum_all")


def dot(a: GraphNode, b: GraphNode) -> GraphNode:
    """Inner product of two equal-length vectors, as a 0-d node."""
    av, bv = a.value.array, b.value.array
    if av.ndim != 1 or av.shape != bv.shape:
        raise DimensionError(f"dot: shapes {av.shape} and {bv.shape}")

    def rule(g: np.ndarray) -> None:
        a.accumulate(g * bv)
        b.accumulate(g * av)

    return _node(av @ bv, (a, b), rule, "dot")


def _topological_order(root: GraphNode) -> list[GraphNode]:
    order: list[GraphNode] = []
    visited: set[int] = set()
    stack: list[tuple[GraphNode, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: GraphNode) -> None:
    """Populate gradients of ``loss`` w.r.t. every reachable node.

    ``loss`` must be a 0-d scalar. Calling backward twice on the same node
    without rebuilding the graph raises, since gradients would silently
    double-accumulate.
    """
    if loss.value.array.ndim != 0:
        raise DimensionError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    if loss._backward_ran:
        raise RuntimeError("backward already ran for this loss; rebuild the graph first")
    order = _topological_order(loss)
    loss.accumulate(np.ones(()))
    for node in reversed(order):
        if node._backward is not None and node.gradient is not None:
            node._backward(node.gradient)
    loss._backward_ran = True


class ParameterStore:
    """Named, seed-deterministic collection of leaf parameter nodes.

    Iteration is sorted by name; initialization draws from a private RNG so
    the same seed and construction order reproduce parameters bit for bit.
    """

    def __init__(self, seed: int) -> None:
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self._params: dict[str, GraphNode] = {}

    def add(self, name: str, array, trainable: bool = True) -> GraphNode:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        node = GraphNode(Tensor(array), name=name, trainable=trainable)
        self._params[name] = node
        return node

    def adopt(self, name: str, node: GraphNode) -> GraphNode:
        """Register an externally created leaf (e.g. an embedding table)."""
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if node.parents:
            raise ValueError(f"cannot adopt non-leaf node as parameter {name!r}")
        node.name = name
        self._params[name] = node
        return node

    def glorot(self, name: str, shape: tuple[int, ...],
               fans: tuple[int, int] | None = None) -> GraphNode:
        """Uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out))."""
        if fans is None:
            fan_out, fan_in = shape[0], int(np.prod(shape[1:]))
        else:
            fan_in, fan_out = fans
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, self._rng.uniform(-a, a, size=shape))

    def normal(self, name: str, shape: tuple[int, ...], std: float = 0.02) -> GraphNode:
        return self.add(name, self._rng.normal(0.0, std, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> GraphNode:
        return self.add(name, np.zeros(shape))

    def __getitem__(self, name: str) -> GraphNode:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, GraphNode]]:
        for name in sorted(self._params):
            yield name, self._params[name]

    def zero_grad(self) -> None:
        for _, node in self.items():
            node.gradient = np.zeros(node.value.shape)

    def scale_gradients(self, factor: float) -> None:
        for _, node in self.items():
            if node.gradient is not None:
                node.gradient *= factor


class Adamax(object):
    """Adamax optimizer (the infinity-norm Adam variant).

    Update per parameter: m <- b1*m + (1-b1)*g, u <- max(b2*u, |g|),
    theta <- theta - lr * (m / (1 - b1^t)) / u, with 0/0 read as 0 so a
    never-touched parameter stays put.
    """

    def __init__(self, store: ParameterStore, betas: tuple[float, float] = (0.9, 0.999)) -> None:
        self.store = store
        self.beta1, self.beta2 = betas
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._u: dict[str, np.ndarray] = {}

    def step(self, lr: float) -> None:
        self.t += 1
        correction = 1.0 - self.beta1 ** self.t
        for name, node in self.store.items():
            if not node.trainable:
                continue
            g = node.gradient
            if g is None:
                raise RuntimeError(f"parameter {name!r} has no gradient; run backward first")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            m = self._m.setdefault(name, np.zeros(node.value.shape))
            u = self._u.setdefault(name, np.zeros(node.value.shape))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            np.maximum(self.beta2 * u, np.abs(g), out=u)
            m_hat = m / correction
            update = np.divide(m_hat, u, out=np.zeros_like(m_hat), where=u != 0)
            node.value.array -= lr * update
