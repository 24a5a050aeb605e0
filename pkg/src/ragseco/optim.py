"""Rectified Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


class NumericalError(ArithmeticError):
    pass


@dataclass
class OptimizerState:
    lr: float
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)


def rho(step: int, beta2: float) -> float:
    """Length of the approximated simple moving average at ``step``."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    b2t = beta2**step
    return rho_inf - 2.0 * step * b2t / (1.0 - b2t)


def radam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None], state: OptimizerState) -> None:
    """One in-place RAdam update of every parameter in ``params``.

    While the variance rectification term is not yet tractable (rho_t <= 4)
    the update is bias-corrected momentum SGD.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    beta1, beta2 = state.betas
    state.step += 1
    t = state.step
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    rho_t = rho(t, beta2)
    bias1 = 1.0 - beta1**t
    if rho_t > 4.0:
        rect = math.sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
        bias2 = 1.0 - beta2**t
    else:
        rect = None
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.exp_avg.get(name)
        v = state.exp_avg_sq.get(name)
        if m is None:
            m = state.exp_avg[name] = np.zeros_like(p.data)
            v = state.exp_avg_sq[name] = np.zeros_like(p.data)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / bias1
        if rect is None:
            p.data -= state.lr * m_hat
        else:
            p.data -= state.lr * rect * m_hat / (np.sqrt(v / bias2) + state.eps)


class RAdam:
    def __init__(self, params: dict[str, Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.state = OptimizerState(lr=lr, betas=tuple(betas), eps=eps)

    def step(self) -> None:
        radam_step(self.params, {k: p.grad for k, p in self.params.items()}, self.state)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
