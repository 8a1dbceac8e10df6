"""
Dense arrays with reverse-mode differentiation.

Every learnable module in the package is built from `DiffTensor` values and the
operations below. Arrays are numpy float32 by default; `default_dtype(np.float64)`
switches newly created tensors to 64-bit for gradient checking.
"""

import contextlib

from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from stc_slr.exceptions import GradientError, NonFiniteError, ShapeMismatchError


_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True
_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    global _DEFAULT_DTYPE
    previous = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class DiffTensor:
    """
    A dense array that can take part in reverse-mode gradient computation.

    Attributes:
        data (np.ndarray): Row-major float32 (or float64 in mirror mode) values.
        grad (Optional[np.ndarray]): Accumulated gradient, same shape as data.
        requires_grad (bool): Whether backward populates `grad` for this tensor.
        name (str): Optional label, used for parameters.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str = "",
        dtype=None,
        _parents: Tuple["DiffTensor", ...] = (),
        _backward: Optional[Callable] = None,
        op: str = "leaf",
    ):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES:
                dtype = data.dtype
            else:
                dtype = _DEFAULT_DTYPE
        array = np.asarray(data, dtype=dtype)
        if not np.isfinite(array).all():
            raise NonFiniteError(f"{op} produced non-finite values (shape {array.shape})")
        self.data = array
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.op = op
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"DiffTensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("DiffTensor supports division by a scalar only")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take_slice(self, index)


def tensor(data, requires_grad: bool = False, name: str = "", dtype=None) -> DiffTensor:
    """Create a leaf tensor holding a private copy of `data`."""
    if dtype is None and not (isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES):
        dtype = _DEFAULT_DTYPE
    return DiffTensor(np.array(data, dtype=dtype, copy=True), requires_grad=requires_grad, name=name)


def parameter(data, name: str = "") -> DiffTensor:
    return tensor(data, requires_grad=True, name=name, dtype=_DEFAULT_DTYPE)


def _as_tensor(value, like: Optional[DiffTensor] = None) -> DiffTensor:
    if isinstance(value, DiffTensor):
        return value
    dtype = like.dtype if like is not None else _DEFAULT_DTYPE
    return DiffTensor(np.asarray(value, dtype=dtype))


def _pair(a, b) -> Tuple[DiffTensor, DiffTensor]:
    if isinstance(a, DiffTensor):
        return a, _as_tensor(b, a)
    b = _as_tensor(b)
    return _as_tensor(a, b), b


def _result(data: np.ndarray, parents: Tuple[DiffTensor, ...], backward: Callable, op: str) -> DiffTensor:
    requires = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    return DiffTensor(
        data,
        requires_grad=requires,
        _parents=parents if requires else (),
        _backward=backward if requires else None,
        op=op,
    )


def _broadcast_shape(op: str, *shapes) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise ShapeMismatchError(f"{op}: operands cannot be broadcast together", *shapes) from None


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_reduced(grad: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if not keepdims:
        grad = np.expand_dims(grad, _normalize_axes(axis, len(shape)))
    return np.broadcast_to(grad, shape)


def _check_temperature(temperature: float) -> None:
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> DiffTensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> DiffTensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> DiffTensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "mul")


def neg(x: DiffTensor) -> DiffTensor:
    def backward(g):
        return (-g,)

    return _result(-x.data, (x,), backward, "neg")


def scale(x: DiffTensor, factor: float) -> DiffTensor:
    """Multiply by a constant that is not part of the graph."""
    c = np.asarray(factor, dtype=x.dtype)

    def backward(g):
        return (g * c,)

    return _result(x.data * c, (x,), backward, "scale")


def matmul(a, b) -> DiffTensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError("matmul: operands must have rank >= 2", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError("matmul: inner dimensions differ", a.shape, b.shape)
    _broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # fold batch dims instead of materializing one (in, out) block per row
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _result(np.matmul(a.data, b.data), (a, b), backward, "matmul")


# ---------------------------------------------------------------- element-wise


def relu(x: DiffTensor) -> DiffTensor:
    def backward(g):
        return (g * (x.data > 0),)

    return _result(np.maximum(x.data, 0), (x,), backward, "relu")


def log(x: DiffTensor) -> DiffTensor:
    if (x.data <= 0).any():
        raise NonFiniteError("log: input holds non-positive values")

    def backward(g):
        return (g / x.data,)

    return _result(np.log(x.data), (x,), backward, "log")


def exp(x: DiffTensor) -> DiffTensor:
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return _result(out, (x,), backward, "exp")


# ---------------------------------------------------------------- normalization


def softmax(x: DiffTensor, temperature: float = 1.0, axis: int = -1) -> DiffTensor:
    """softmax(x / temperature) along `axis`, max-subtracted."""
    _check_temperature(temperature)
    tau = np.asarray(temperature, dtype=x.dtype)
    z = x.data / tau
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)) / tau,)

    return _result(out, (x,), backward, "softmax")


def log_softmax(x: DiffTensor, temperature: float = 1.0, axis: int = -1) -> DiffTensor:
    _check_temperature(temperature)
    tau = np.asarray(temperature, dtype=x.dtype)
    z = x.data / tau
    shifted = z - z.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        probs = np.exp(out)
        return ((g - probs * g.sum(axis=axis, keepdims=True)) / tau,)

    return _result(out, (x,), backward, "log_softmax")


def layer_norm(x: DiffTensor, gamma: DiffTensor, beta: DiffTensor, eps: float = 1e-5) -> DiffTensor:
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ShapeMismatchError(
            "layer_norm: affine parameters must match the last dim", x.shape, gamma.shape, beta.shape
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = centered * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gxhat = g * gamma.data
        gx = inv / width * (
            width * gxhat - gxhat.sum(axis=-1, keepdims=True) - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
        )
        ggamma = (g * xhat).reshape(-1, width).sum(axis=0)
        gbeta = g.reshape(-1, width).sum(axis=0)
        return gx, ggamma, gbeta

    return _result(out, (x, gamma, beta), backward, "layer_norm")


def l2_normalize(x: DiffTensor, axis: int = -1, eps: float = 1e-12) -> DiffTensor:
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, np.asarray(eps, dtype=x.dtype))
    out = x.data / denom

    def backward(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / denom,)

    return _result(out, (x,), backward, "l2_normalize")


# ---------------------------------------------------------------- reductions


def reduce_sum(x: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        return (_expand_reduced(g, x.shape, axis, keepdims).copy(),)

    return _result(out, (x,), backward, "sum")


def reduce_mean(x: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))
    count = x.data.size // max(out.size, 1)

    def backward(g):
        return (_expand_reduced(g, x.shape, axis, keepdims) / np.asarray(count, dtype=x.dtype),)

    return _result(out, (x,), backward, "mean")


# ---------------------------------------------------------------- structural


def concat(tensors: Sequence[DiffTensor], axis: int = 0) -> DiffTensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeMismatchError("concat: nothing to concatenate")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeMismatchError("concat: non-axis dims differ", *(t.shape for t in tensors))
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tensors, backward, "concat")


def take_slice(x: DiffTensor, index) -> DiffTensor:
    """Basic (slice/int) indexing."""
    out = np.array(x.data[index])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return _result(out, (x,), backward, "slice")


def gather(x: DiffTensor, indices, axis: int = 0) -> DiffTensor:
    """np.take along `axis`; repeated indices accumulate in backward."""
    axis = axis % x.ndim
    idx = np.asarray(indices, dtype=np.int64)
    n = x.shape[axis]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeMismatchError(f"gather: indices out of range for axis {axis}", x.shape, idx.shape)
    out = np.take(x.data, idx, axis=axis)
    flat = idx.reshape(-1)

    def backward(g):
        gx = np.zeros_like(x.data)
        g_rows = g.reshape(x.shape[:axis] + (flat.size,) + x.shape[axis + 1 :])
        np.add.at(np.moveaxis(gx, axis, 0), flat, np.moveaxis(g_rows, axis, 0))
        return (gx,)

    return _result(out, (x,), backward, "gather")


def reshape(x: DiffTensor, shape) -> DiffTensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatchError("reshape: element count differs", x.shape, shape) from None

    def backward(g):
        return (g.reshape(x.shape),)

    return _result(out, (x,), backward, "reshape")


def transpose(x: DiffTensor, axes: Sequence[int]) -> DiffTensor:
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeMismatchError(f"transpose: {axes} is not a permutation", x.shape)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(x.data, axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return _result(out, (x,), backward, "transpose")


OP_KINDS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "scale": scale,
    "relu": relu,
    "softmax-with-temperature": softmax,
    "log-softmax": log_softmax,
    "log": log,
    "exp": exp,
    "layer-norm": layer_norm,
    "mean": reduce_mean,
    "sum": reduce_sum,
    "concat": lambda *inputs, **attrs: concat(inputs, **attrs),
    "slice": take_slice,
    "l2-normalize": l2_normalize,
    "gather": gather,
    "reshape": reshape,
    "transpose": transpose,
}


def forward_op(kind: str, inputs: Sequence[Union[DiffTensor, np.ndarray]], **attrs) -> DiffTensor:
    """
    Apply the operation named `kind` to `inputs`.

    Example:
        forward_op("softmax-with-temperature", [x], temperature=0.07)
    """
    if kind not in OP_KINDS:
        raise ValueError(f"Unknown op kind: {kind}")
    return OP_KINDS[kind](*[_as_tensor(t) for t in inputs], **attrs)


# ---------------------------------------------------------------- backward


def _topological_order(root: DiffTensor):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: DiffTensor) -> None:
    """
    Accumulate d(loss)/d(t) into `t.grad` for every reachable tensor with requires_grad.

    Gradients add to whatever is already stored; callers zero them between steps.

    Raises:
        GradientError: If the root is not a scalar or nothing upstream requires grad.
    """
    if loss.data.size != 1:
        raise GradientError(f"backward needs a scalar root, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientError("backward root does not depend on any tensor requiring grad")

    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = np.array(g, dtype=node.dtype) if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, parent_grad in zip(node._parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pending[key] + parent_grad if key in pending else parent_grad


def zero_grad(tensors: Iterable[DiffTensor]) -> None:
    for t in tensors:
        t.grad = None
