"""Minimal SGD with momentum; enough to show the mechanism trains."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor

__all__ = ["sgd_step", "SGD"]


def sgd_step(param: Tensor, grad: Tensor, lr: float, momentum: float = 0.0,
             velocity: np.ndarray | None = None) -> np.ndarray:
    """v <- momentum*v + g; p <- p - lr*v. Updates ``param`` in place.

    Returns the new velocity buffer (pass it back next step). Requires
    exclusive access to ``param``.
    """
    if grad.shape != param.shape:
        raise ShapeError(f"sgd_step: grad {grad.shape} vs param {param.shape}")
    if velocity is None:
        v = grad.data.copy()
    else:
        if velocity.shape != param.shape:
            raise ShapeError(f"sgd_step: velocity {velocity.shape} vs param {param.shape}")
        v = momentum * velocity + grad.data
    param.assign_(param.data - lr * v)
    return v


class SGD:
    """Keeps one velocity buffer per parameter name."""

    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, named_params, grads: dict[str, Tensor]) -> None:
        for name, p in named_params:
            self._velocity[name] = sgd_step(
                p, grads[name], self.lr, self.momentum, self._velocity.get(name))
