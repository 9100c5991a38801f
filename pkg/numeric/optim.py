import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from numeric.tensor import Tensor
from utils.exceptions import ContractError

logger = logging.getLogger(__name__)


@dataclass
class AdamWState:
    """Moments, step counter and hyperparameters of AdamW (decoupled weight decay)."""
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)

    def hyperparameters(self) -> dict:
        return {"learning_rate": self.learning_rate, "beta1": self.beta1, "beta2": self.beta2,
                "epsilon": self.epsilon, "weight_decay": self.weight_decay, "step": self.step}


def adamw_step(params: Mapping[str, Tensor], state: AdamWState) -> None:
    """Update every parameter in place, then clear its gradient."""
    for name, param in params.items():
        if param.grad is None:
            raise ContractError(f"parameter '{name}' has no gradient, run backward before the optimizer step")
    state.step += 1
    bias_correction1 = 1.0 - state.beta1 ** state.step
    bias_correction2 = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        grad = param.grad
        exp_avg = state.exp_avg.setdefault(name, np.zeros_like(param.data))
        exp_avg_sq = state.exp_avg_sq.setdefault(name, np.zeros_like(param.data))
        if exp_avg.shape != param.data.shape:
            raise ContractError(f"optimizer state for '{name}' has shape {exp_avg.shape}, "
                                f"parameter has shape {param.data.shape}")
        param.data *= 1.0 - state.learning_rate * state.weight_decay
        exp_avg *= state.beta1
        exp_avg += (1.0 - state.beta1) * grad
        exp_avg_sq *= state.beta2
        exp_avg_sq += (1.0 - state.beta2) * grad * grad
        denominator = np.sqrt(exp_avg_sq / bias_correction2) + state.epsilon
        param.data -= state.learning_rate * (exp_avg / bias_correction1) / denominator
        param.grad = None


class AdamW:
    """Owns a parameter map and its :class:`AdamWState`."""

    def __init__(self, params: Mapping[str, Tensor], learning_rate=1e-4, betas=(0.9, 0.999), epsilon=1e-8,
                 weight_decay=0.01, state: AdamWState = None):
        self.params = dict(params)
        self.state = state or AdamWState(learning_rate=learning_rate, beta1=betas[0], beta2=betas[1],
                                         epsilon=epsilon, weight_decay=weight_decay)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.grad = None

    def step(self) -> None:
        # a pipeline switched off by the ablation setting leaves its parameters without gradients
        reached = {name: param for name, param in self.params.items() if param.grad is not None}
        adamw_step(reached, self.state)
