"""Adam / AdamW with bias correction.

Adam couples weight decay into the gradient (g += wd * p); AdamW applies
decoupled decay p <- p - lr*wd*p before the moment update. Moment buffers
live per parameter name so the state survives checkpointing.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError
from .tensor import Tensor


@dataclass
class OptimizerState:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    decoupled: bool = False  # True = AdamW
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Optimizer over named parameters; step() consumes .grad buffers."""

    def __init__(self, named_params: list[tuple[str, Tensor]], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, decoupled: bool = False):
        self.named_params = list(named_params)
        self.state = OptimizerState(lr=lr, betas=betas, eps=eps,
                                    weight_decay=weight_decay, decoupled=decoupled)
        for name, p in self.named_params:
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.state, self.named_params)


def adam_step(state: OptimizerState, named_params: list[tuple[str, Tensor]]) -> None:
    """One in-place update; parameters with no gradient are skipped.

    Raises TrainingError naming the parameter and step when a gradient
    contains NaN.
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.betas
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in named_params:
        if p.grad is None:
            continue
        g = p.grad
        if np.isnan(g).any():
            raise TrainingError(f"NaN gradient in {name!r} at optimizer step {t}")
        if state.weight_decay != 0.0:
            if state.decoupled:
                p.data -= state.lr * state.weight_decay * p.data
            else:
                g = g + state.weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def make_adamw(named_params, lr: float, weight_decay: float = 0.0) -> Adam:
    return Adam(named_params, lr=lr, weight_decay=weight_decay, decoupled=True)
