"""
Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation is a :class:`Function` with a ``forward`` on raw numpy arrays and a
``backward`` mapping the output gradient to one gradient per positional input. ``Function.apply``
records the operation on the output tensor when any input requires a gradient; :func:`backward`
walks the recorded graph in reverse topological order and frees it afterwards.
"""
import contextlib
import logging
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from utils.exceptions import ContractError, DegenerateBatchError, DimensionError, NumericError, TokenIndexError

logger = logging.getLogger(__name__)

_default_dtype = np.float32
_grad_enabled = True

ArrayLike = Union[np.ndarray, float, int, Sequence]


def get_default_dtype():
    return _default_dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the precision of newly created tensors, e.g. to float64 for gradient checks."""
    global _default_dtype
    previous = _default_dtype
    _default_dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _default_dtype = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording, e.g. for generation and validation."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    # makes `ndarray + Tensor` dispatch to Tensor.__radd__
    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _default_dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._ctx: Optional["Function"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        grad_info = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad_info})"

    def __len__(self):
        return self.data.shape[0]

    # arithmetic
    def __add__(self, other):
        return Add.apply(self, other)

    def __radd__(self, other):
        return Add.apply(self, other)

    def __sub__(self, other):
        return Sub.apply(self, other)

    def __rsub__(self, other):
        return Neg.apply(Sub.apply(self, other))

    def __mul__(self, other):
        return Mul.apply(self, other)

    def __rmul__(self, other):
        return Mul.apply(self, other)

    def __truediv__(self, other):
        return Div.apply(self, other)

    def __neg__(self):
        return Neg.apply(self)

    def __matmul__(self, other):
        return MatMul.apply(self, other)

    def __getitem__(self, key):
        return GetItem.apply(self, key=key)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        count = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return Sum.apply(self, axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        return Transpose.apply(self, axes=axes)


class Function:
    """One recorded operation of the autodiff graph."""

    def __init__(self):
        self.inputs: Tuple = ()
        self.saved: Tuple = ()

    def save_for_backward(self, *values) -> None:
        self.saved = values

    def forward(self, *args, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *args, **kwargs) -> Tensor:
        fn = cls()
        first = next(a for a in args if isinstance(a, Tensor))
        raw = [a.data if isinstance(a, Tensor) else a for a in args]
        out = Tensor(fn.forward(*raw, **kwargs), dtype=first.data.dtype)
        if _grad_enabled and any(isinstance(a, Tensor) and a.requires_grad for a in args):
            out.requires_grad = True
            fn.inputs = args
            out._ctx = fn
        return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape of an input that was broadcast in the forward pass."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _topological_order(root: Tensor) -> List[Tensor]:
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
        if node._ctx is not None:
            for parent in node._ctx.inputs:
                if isinstance(parent, Tensor) and parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` of every leaf tensor reachable from the scalar ``loss``; grads accumulate."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got a tensor of shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward called on a loss that does not depend on any tensor requiring grad")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        fn = node._ctx
        if fn is None:
            grad = grad.astype(node.data.dtype, copy=False)
            node.grad = grad if node.grad is None else node.grad + grad
            continue
        for parent, parent_grad in zip(fn.inputs, fn.backward(grad)):
            if parent_grad is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                continue
            parent_grad = _unbroadcast(parent_grad, parent.data.shape)
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad
        # free the graph
        node._ctx = None


class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, grad):
        return grad, -grad


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Mul(Function):
    def forward(self, a, b):
        self.save_for_backward(a, b)
        return a * b

    def backward(self, grad):
        a, b = self.saved
        return grad * b, grad * a


class Div(Function):
    def forward(self, a, b):
        self.save_for_backward(a, b)
        return a / b

    def backward(self, grad):
        a, b = self.saved
        return grad / b, -grad * a / (b * b)


class MatMul(Function):
    def forward(self, a, b):
        a_shape, b_shape = np.shape(a), np.shape(b)
        if len(a_shape) < 2 or len(b_shape) < 2 or a_shape[-1] != b_shape[-2]:
            raise DimensionError(f"matmul shape mismatch: {a_shape} @ {b_shape}")
        self.save_for_backward(a, b)
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.saved
        return np.matmul(grad, np.swapaxes(b, -1, -2)), np.matmul(np.swapaxes(a, -1, -2), grad)


class Transpose(Function):
    def forward(self, a, axes):
        self.axes = tuple(axes)
        return np.transpose(a, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Reshape(Function):
    def forward(self, a, shape):
        self.input_shape = a.shape
        return np.reshape(a, shape)

    def backward(self, grad):
        return (np.reshape(grad, self.input_shape),)


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.input_shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.input_shape).copy(),)


class Exp(Function):
    def forward(self, a):
        out = np.exp(a)
        self.save_for_backward(out)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return (grad * out,)


class Log(Function):
    def forward(self, a):
        self.save_for_backward(a)
        return np.log(a)

    def backward(self, grad):
        (a,) = self.saved
        return (grad / a,)


class Gelu(Function):
    """tanh approximation of the Gaussian error linear unit"""
    coefficient = 0.044715

    def forward(self, a):
        inner = np.sqrt(2.0 / np.pi) * (a + self.coefficient * a ** 3)
        tanh = np.tanh(inner)
        self.save_for_backward(a, tanh)
        return 0.5 * a * (1.0 + tanh)

    def backward(self, grad):
        a, tanh = self.saved
        d_inner = np.sqrt(2.0 / np.pi) * (1.0 + 3.0 * self.coefficient * a ** 2)
        return (grad * (0.5 * (1.0 + tanh) + 0.5 * a * (1.0 - tanh ** 2) * d_inner),)


class Softmax(Function):
    def forward(self, a, axis=-1):
        if np.isnan(a).any():
            raise NumericError(f"softmax input of shape {a.shape} contains NaN")
        self.axis = axis
        # scipy subtracts the row maximum before exponentiating
        out = special.softmax(a, axis=axis)
        self.save_for_backward(out)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return (out * (grad - (grad * out).sum(axis=self.axis, keepdims=True)),)


class LogSoftmax(Function):
    def forward(self, a, axis=-1):
        if np.isnan(a).any():
            raise NumericError(f"log_softmax input of shape {a.shape} contains NaN")
        self.axis = axis
        out = special.log_softmax(a, axis=axis)
        self.save_for_backward(out)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return (grad - np.exp(out) * grad.sum(axis=self.axis, keepdims=True),)


class CrossEntropy(Function):
    def forward(self, logits, targets, pad_id):
        targets = np.asarray(targets)
        if logits.ndim != 2 or targets.shape != (logits.shape[0],):
            raise DimensionError(f"cross_entropy expects logits [T, V] and targets [T], "
                                 f"got {logits.shape} and {targets.shape}")
        mask = targets != pad_id
        count = int(mask.sum())
        if count == 0:
            raise DegenerateBatchError("every target position is padding, the loss has no terms")
        vocab_size = logits.shape[1]
        if (targets[mask] < 0).any() or (targets[mask] >= vocab_size).any():
            bad = targets[mask][(targets[mask] < 0) | (targets[mask] >= vocab_size)]
            raise TokenIndexError(f"target ids {bad.tolist()} out of range for vocabulary size {vocab_size}")
        safe_targets = np.where(mask, targets, 0)
        log_probs = special.log_softmax(logits, axis=-1)
        picked = log_probs[np.arange(len(targets)), safe_targets]
        self.save_for_backward(log_probs, safe_targets, mask, count)
        return np.asarray(-(picked * mask).sum() / count)

    def backward(self, grad):
        log_probs, safe_targets, mask, count = self.saved
        d_logits = np.exp(log_probs)
        d_logits[np.arange(len(safe_targets)), safe_targets] -= 1.0
        d_logits *= mask[:, None] / count
        return grad * d_logits, None, None


class LayerNorm(Function):
    def forward(self, a, gamma, beta, eps=1e-5):
        mean = a.mean(axis=-1, keepdims=True)
        rstd = 1.0 / np.sqrt(a.var(axis=-1, keepdims=True) + eps)
        normalized = (a - mean) * rstd
        self.save_for_backward(normalized, rstd, gamma)
        return normalized * gamma + beta

    def backward(self, grad):
        normalized, rstd, gamma = self.saved
        d_normalized = grad * gamma
        d_a = rstd * (d_normalized - d_normalized.mean(axis=-1, keepdims=True)
                      - normalized * (d_normalized * normalized).mean(axis=-1, keepdims=True))
        return d_a, grad * normalized, grad


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.boundaries = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.boundaries, axis=self.axis))


class Gather(Function):
    """Row lookup ``weight[ids]`` (embedding tables)."""

    def forward(self, weight, ids):
        self.save_for_backward(weight.shape, ids)
        return weight[ids]

    def backward(self, grad):
        shape, ids = self.saved
        d_weight = np.zeros(shape, dtype=grad.dtype)
        np.add.at(d_weight, ids, grad)
        return d_weight, None


class GetItem(Function):
    def forward(self, a, key):
        self.save_for_backward(a.shape, key)
        return a[key]

    def backward(self, grad):
        shape, key = self.saved
        d_a = np.zeros(shape, dtype=grad.dtype)
        np.add.at(d_a, key, grad)
        return (d_a,)


class Expand(Function):
    def forward(self, a, shape):
        return np.broadcast_to(a, shape)

    def backward(self, grad):
        # summed back to the input shape by the engine
        return (grad,)

