"""AdamW with decoupled weight decay and a cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeMismatch, Tensor


@dataclass
class OptimizerState:
    """Per-parameter Adam moments plus hyperparameters.

    Weight decay is decoupled: parameters are shrunk by ``lr * weight_decay``
    before the moment-based update, so decay never enters the moments.
    """

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, Tensor], **kwargs) -> "OptimizerState":
        state = cls(**kwargs)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adamw_step(params: dict[str, Tensor], state: OptimizerState, lr: float) -> None:
    """One AdamW update over every parameter; missing gradients count as zero."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        m = state.m[name]
        v = state.v[name]
        if m.shape != p.data.shape:
            raise ShapeMismatch(f"moment/parameter shape mismatch for {name!r}")
        grad = p.grad
        if grad is None:
            grad = np.zeros_like(p.data)
        elif grad.shape != p.data.shape:
            raise ShapeMismatch(f"gradient/parameter shape mismatch for {name!r}")
        p.data *= 1.0 - lr * state.weight_decay
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    total_steps: int
    min_lr: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.min_lr <= self.base_lr:
            raise ValueError("need 0 <= min_lr <= base_lr")
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")


def cosine_lr(schedule: LrSchedule, step: int) -> float:
    """Cosine decay from base_lr at step 0 to min_lr at total_steps."""
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    span = schedule.base_lr - schedule.min_lr
    return schedule.min_lr + 0.5 * span * (1.0 + math.cos(math.pi * step / schedule.total_steps))
