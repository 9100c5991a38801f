from typing import Optional, Sequence

import numpy as np

from numeric.tensor import (Concat, CrossEntropy, Exp, Expand, Gather, Gelu, LayerNorm, Log, LogSoftmax, MatMul,
                            Softmax, Tensor)
from utils.exceptions import DimensionError


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product, batched over leading dimensions; a 2-D ``b`` is shared across the batch."""
    return MatMul.apply(a, b)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got shape {x.shape}")
    return Softmax.apply(x, axis=-1)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(x, axis=axis)


def cross_entropy(logits: Tensor, targets: Sequence[int], pad_id: int) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over the non-pad positions."""
    return CrossEntropy.apply(logits, np.asarray(targets, dtype=np.int64), pad_id=pad_id)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def gelu(x: Tensor) -> Tensor:
    return Gelu.apply(x)


def exp(x: Tensor) -> Tensor:
    return Exp.apply(x)


def log(x: Tensor) -> Tensor:
    return Log.apply(x)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    widths = {t.shape[-1] for t in tensors}
    if len(widths) > 1 and axis not in (-1, tensors[0].ndim - 1):
        raise DimensionError(f"cannot concatenate tensors of shapes {[t.shape for t in tensors]} along axis {axis}")
    return Concat.apply(*tensors, axis=axis)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    return Gather.apply(weight, np.asarray(ids, dtype=np.int64))


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Expand.apply(x, shape=tuple(shape))


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; the identity in eval mode."""
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep
