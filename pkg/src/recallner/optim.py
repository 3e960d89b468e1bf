"""Adam with decoupled weight decay, written out from the update equations.

Per step (t incremented before bias correction):

    m_t = beta1 * m_{t-1} + (1 - beta1) * g
    v_t = beta2 * v_{t-1} + (1 - beta2) * g^2
    mhat = m_t / (1 - beta1^t)
    vhat = v_t / (1 - beta2^t)
    theta' = theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta

The decay term is proportional to the weight itself and bypasses the
adaptive rescaling entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.02

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("beta1 and beta2 must be in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass
class OptimizerState:
    """First/second moment estimates per parameter tensor plus the step count."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, tensors: Mapping[str, np.ndarray]) -> "OptimizerState":
        return cls(
            m={name: np.zeros_like(arr) for name, arr in tensors.items()},
            v={name: np.zeros_like(arr) for name, arr in tensors.items()},
            t=0,
        )


def adamw_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    hyper: HyperParams,
) -> tuple[dict, OptimizerState]:
    """Apply one update; returns new tensors and new state (inputs untouched)."""
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise ValueError(f"non-finite gradient for {name!r}")

    t = state.t + 1
    bias1 = 1.0 - hyper.beta1 ** t
    bias2 = 1.0 - hyper.beta2 ** t

    new_params: dict = {}
    new_m: dict = {}
    new_v: dict = {}
    for name, theta in params.items():
        g = grads[name]
        m = hyper.beta1 * state.m[name] + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * state.v[name] + (1.0 - hyper.beta2) * g * g
        mhat = m / bias1
        vhat = v / bias2
        new_params[name] = (
            theta
            - hyper.learning_rate * mhat / (np.sqrt(vhat) + hyper.epsilon)
            - hyper.learning_rate * hyper.weight_decay * theta
        )
        new_m[name] = m
        new_v[name] = v
    return new_params, OptimizerState(m=new_m, v=new_v, t=t)
