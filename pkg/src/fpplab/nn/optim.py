"""Adam with L2-style weight decay folded into the gradient."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgument, InvalidState


@dataclass
class OptimizerState:
    """Per-parameter Adam moments plus hyper-parameters.

    ``lr`` may be changed between steps by a schedule; the moments and step
    counter are what make a run resumable.
    """

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0 or self.epsilon <= 0:
            raise InvalidArgument("lr and weight_decay must be >= 0 and epsilon > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidArgument("betas must lie in [0, 1)")


def adam_step(params: dict, state: OptimizerState) -> OptimizerState:
    """Apply one bias-corrected Adam update in place to every tensor in ``params``.

    ``weight_decay * param`` is added to the gradient before the moment
    updates. Raises :class:`InvalidState` if any parameter has no gradient.
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise InvalidState(f"no gradient for parameters {missing}; call backward() first")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad
        if g.shape != p.data.shape:
            raise InvalidState(f"gradient of {name} has shape {g.shape}, parameter {p.data.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return state


def zero_grad(params: dict):
    for p in params.values():
        p.grad = None
