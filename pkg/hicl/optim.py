"""Adam optimiser.

``adam_step`` is the pure update; :class:`Adam` applies it in place to a
set of named parameter tensors.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

from .exceptions import DimensionError
from .tensor import Tensor

logger = logging.getLogger(__name__)

DEFAULT_LR = 1e-3
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8


@dataclass
class AdamState:
    """First/second moment estimates and the shared step counter"""
    step: int = 0
    first: Dict[str, np.ndarray] = field(default_factory=dict)
    second: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float = DEFAULT_LR, beta1: float = DEFAULT_BETA1, beta2: float = DEFAULT_BETA2,
              eps: float = DEFAULT_EPS) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update.

    Args:
        params: Current parameter values by name
        grads: Gradients by name, same shapes as ``params``
        state: Moments from the previous step (missing entries start at zero)
        lr: Learning rate
        beta1: First-moment decay
        beta2: Second-moment decay
        eps: Denominator stabiliser

    Returns:
        Tuple of (new parameter values, new state); inputs are not modified

    Raises:
        DimensionError: If a gradient or moment shape disagrees with its parameter
    """
    step = state.step + 1
    new_params: Dict[str, np.ndarray] = {}
    new_state = AdamState(step=step)
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step
    for name, value in params.items():
        grad = grads[name]
        first = state.first.get(name, np.zeros_like(value))
        second = state.second.get(name, np.zeros_like(value))
        if grad.shape != value.shape or first.shape != value.shape or second.shape != value.shape:
            raise DimensionError(f"adam: shape mismatch for {name!r}: param {value.shape}, grad {grad.shape}")
        first = beta1 * first + (1.0 - beta1) * grad
        second = beta2 * second + (1.0 - beta2) * grad * grad
        update = (first / correction1) / (np.sqrt(second / correction2) + eps)
        new_params[name] = value - lr * update
        new_state.first[name] = first
        new_state.second[name] = second
    return new_params, new_state


class Adam:
    """In-place Adam over named tensors"""

    def __init__(self, params: Iterable[Tuple[str, Tensor]], lr: float = DEFAULT_LR,
                 beta1: float = DEFAULT_BETA1, beta2: float = DEFAULT_BETA2, eps: float = DEFAULT_EPS):
        self.params: Dict[str, Tensor] = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.zero_grad()

    def step(self) -> None:
        live = {name: t for name, t in self.params.items() if t.requires_grad}
        values = {name: t.data for name, t in live.items()}
        grads = {name: t.grad for name, t in live.items()}
        updated, self.state = adam_step(values, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
        for name, tensor in live.items():
            tensor.data[...] = updated[name]
