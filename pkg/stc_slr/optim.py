from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from stc_slr.exceptions import ConfigError, GradientError
from stc_slr.tensor_core import DiffTensor


@dataclass
class SgdState:
    """
    Learning rate, momentum and one velocity buffer per parameter.

    Attributes:
        lr (float): Current learning rate; the trainer overwrites it every epoch.
        momentum (float): Momentum coefficient in [0, 1).
        velocity (Dict[int, np.ndarray]): Buffers keyed by parameter identity; empty when momentum is 0.
    """

    lr: float
    momentum: float = 0.0
    velocity: Dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")

    @classmethod
    def create(cls, params: Sequence[DiffTensor], lr: float, momentum: float = 0.0) -> "SgdState":
        state = cls(lr=lr, momentum=momentum)
        if momentum > 0:
            state.velocity = {id(p): np.zeros_like(p.data) for p in params if p.requires_grad}
        return state


def sgd_step(state: SgdState, params: Sequence[DiffTensor]) -> None:
    """
    v <- momentum * v + grad; theta <- theta - lr * v. Gradients are left in place.

    Raises:
        GradientError: If a trainable parameter carries no gradient.
    """
    trainable = [p for p in params if p.requires_grad]
    missing = [p.name or repr(p) for p in trainable if p.grad is None]
    if missing:
        raise GradientError(f"sgd_step: no gradient for {', '.join(missing)}")

    for p in trainable:
        lr = np.asarray(state.lr, dtype=p.dtype)
        if state.momentum > 0:
            v = state.velocity.get(id(p))
            if v is None:
                v = state.velocity[id(p)] = np.zeros_like(p.data)
            v *= np.asarray(state.momentum, dtype=p.dtype)
            v += p.grad
            p.data -= lr * v
        else:
            p.data -= lr * p.grad


def lr_schedule(epoch: int, base_lr: float, decay_every: int, factor: float) -> float:
    """
    Step decay: base_lr * factor ** (epoch // decay_every).

    Example:
        lr_schedule(149, 0.01, 50, 0.1)  # 1e-4
    """
    if decay_every <= 0:
        raise ConfigError(f"decay_every must be positive, got {decay_every}")
    return base_lr * factor ** (epoch // decay_every)
