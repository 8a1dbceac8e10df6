"""
Neural network layers on top of tensor_core.

Any `DiffTensor` attribute of a `Module` is one of its parameters; constant arrays
are kept as plain numpy arrays.
"""

import copy

from typing import Dict, Iterator, List, Tuple

import numpy as np

from stc_slr.exceptions import ShapeMismatchError
from stc_slr.tensor_core import (
    DiffTensor,
    add,
    layer_norm,
    matmul,
    parameter,
    relu,
    reshape,
    scale,
    softmax,
    transpose,
)


class Module:
    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, DiffTensor]]:
        """Yield (dotted name, parameter) pairs in definition order."""
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, DiffTensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> List[DiffTensor]:
        return [p for _, p in self.named_parameters()]

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        """
        Copy arrays into the parameters with matching names.

        Raises:
            ShapeMismatchError: On a shape mismatch, or when `strict` and names differ.
        """
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise ShapeMismatchError(
                    f"state mismatch; missing: {', '.join(missing) or '-'}; unexpected: {', '.join(unexpected) or '-'}"
                )
        for name, p in own.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeMismatchError(f"parameter {name}", p.shape, value.shape)
            p.data[...] = value

    def clone(self, requires_grad: bool = True) -> "Module":
        twin = copy.deepcopy(self)
        twin.set_requires_grad(requires_grad)
        return twin

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    """y = x @ W + b, with W drawn from U(-1/sqrt(in), 1/sqrt(in)) and b zero."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = parameter(rng.uniform(-bound, bound, size=(in_dim, out_dim)))
        self.bias = parameter(np.zeros(out_dim)) if bias else None

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def forward(self, x: DiffTensor) -> DiffTensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeMismatchError("linear input width", x.shape, self.weight.shape)
        if x.ndim == 1:
            return reshape(self.forward(reshape(x, (1, x.shape[0]))), (self.out_dim,))
        y = matmul(x, self.weight)
        return add(y, self.bias) if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))

    def forward(self, x: DiffTensor) -> DiffTensor:
        return layer_norm(x, self.gamma, self.beta)


class GraphConv(Module):
    """
    Spatial graph convolution: relu is left to the caller.

    x (N, J, C_in) -> A_hat @ x @ W + b with A_hat = D^-1/2 (A + I) D^-1/2.
    """

    def __init__(self, in_channels: int, out_channels: int, propagation: np.ndarray, rng: np.random.Generator):
        self.propagation = np.asarray(propagation, dtype=np.float64)
        self.linear = Linear(in_channels, out_channels, rng)

    def forward(self, x: DiffTensor) -> DiffTensor:
        joints = self.propagation.shape[0]
        if x.ndim != 3 or x.shape[1] != joints:
            raise ShapeMismatchError(f"graph conv expects (N, {joints}, C)", x.shape)
        mixed = matmul(DiffTensor(self.propagation.astype(x.dtype)), x)
        return self.linear(mixed)


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator):
        if dim % num_heads:
            raise ShapeMismatchError(f"model dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.output = Linear(dim, dim, rng)

    def _split(self, x: DiffTensor) -> DiffTensor:
        n, t, d = x.shape
        return transpose(reshape(x, (n, t, self.num_heads, d // self.num_heads)), (0, 2, 1, 3))

    def forward(self, x: DiffTensor) -> DiffTensor:
        n, t, d = x.shape
        head_dim = d // self.num_heads
        q = self._split(self.query(x))
        k = self._split(self.key(x))
        v = self._split(self.value(x))
        scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(head_dim))
        attended = matmul(softmax(scores, axis=-1), v)
        merged = reshape(transpose(attended, (0, 2, 1, 3)), (n, t, d))
        return self.output(merged)


class TransformerBlock(Module):
    """Pre-norm block: x + attn(ln(x)), then x + ff(ln(x))."""

    def __init__(self, dim: int, num_heads: int, ff_dim: int, rng: np.random.Generator):
        self.norm_attn = LayerNorm(dim)
        self.attention = MultiHeadSelfAttention(dim, num_heads, rng)
        self.norm_ff = LayerNorm(dim)
        self.ff_in = Linear(dim, ff_dim, rng)
        self.ff_out = Linear(ff_dim, dim, rng)

    def forward(self, x: DiffTensor) -> DiffTensor:
        x = add(x, self.attention(self.norm_attn(x)))
        return add(x, self.ff_out(relu(self.ff_in(self.norm_ff(x)))))


class MLP(Module):
    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, rng: np.random.Generator):
        self.hidden = Linear(in_dim, hidden_dim, rng)
        self.out = Linear(hidden_dim, out_dim, rng)

    def forward(self, x: DiffTensor) -> DiffTensor:
        return self.out(relu(self.hidden(x)))
