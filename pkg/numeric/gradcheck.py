from typing import Callable, Dict, Mapping

import numpy as np

from numeric.tensor import Tensor, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denominator = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if denominator == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denominator)


def numerical_gradient(loss_fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of ``loss_fn`` with respect to every entry of ``tensor``."""
    grad = np.zeros_like(tensor.data)
    with no_grad():
        for index in np.ndindex(*tensor.shape):
            original = tensor.data[index]
            tensor.data[index] = original + h
            plus = loss_fn().item()
            tensor.data[index] = original - h
            minus = loss_fn().item()
            tensor.data[index] = original
            grad[index] = (plus - minus) / (2 * h)
    return grad


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Mapping[str, Tensor], h: float = 1e-4) -> Dict[str, float]:
    """
    Compare autodiff gradients with central differences; returns the relative error per tensor.
    The tensors should hold 64-bit data (see ``numeric.tensor.default_dtype``).
    """
    for tensor in tensors.values():
        tensor.grad = None
    loss_fn().backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in tensors.items()}
    return {name: relative_error(analytic[name], numerical_gradient(loss_fn, tensor, h))
            for name, tensor in tensors.items()}
