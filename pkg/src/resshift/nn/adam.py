"""Adam with bias correction, the optimizer used for all training runs.

Update rule (standard defaults beta1=0.9, beta2=0.999, eps=1e-8):

    m <- beta1 m + (1-beta1) g        m_hat = m / (1 - beta1^k)
    v <- beta2 v + (1-beta2) g^2      v_hat = v / (1 - beta2^k)
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)

with eps added outside the square root.  Gradients are validated to be
finite before any state is touched and zeroed after application, so a
step either happens completely or not at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError, TrainingDivergenceError


@dataclass
class AdamState:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, lr: float = 5e-5) -> "AdamState":
        return cls(
            lr=lr,
            first_moment={k: np.zeros_like(p.data) for k, p in params.items()},
            second_moment={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(params: dict, grads: dict[str, np.ndarray], state: AdamState) -> AdamState:
    """Apply one update in place; returns the (mutated) state.

    `params` maps names to objects with a mutable `.data` array (and a
    `.zero_grad()` hook, called after the update); `grads` maps the same
    names to gradient arrays.  A missing gradient means "no update" for
    that parameter this step.
    """
    for name, g in grads.items():
        if g is None:
            continue
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].data.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != {params[name].data.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient in parameter {name!r}")

    state.step_count += 1
    c1 = 1.0 - state.beta1 ** state.step_count
    c2 = 1.0 - state.beta2 ** state.step_count
    for name, g in grads.items():
        if g is None:
            continue
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name].data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    for name in grads:
        zero = getattr(params[name], "zero_grad", None)
        if zero is not None:
            zero()
    return state


def descend(fn, w0: float, lr: float, steps: int) -> float:
    """Minimize a scalar function of one variable (fn returns (value, grad)).

    Small harness used by tests and docs to sanity-check the optimizer on
    closed-form objectives.
    """
    holder = type("P", (), {"data": np.array([w0], dtype=np.float64)})()
    state = AdamState.for_params({"w": holder}, lr=lr)
    for _ in range(steps):
        _, grad = fn(float(holder.data[0]))
        if not math.isfinite(grad):
            raise TrainingDivergenceError("non-finite gradient in parameter 'w'")
        adam_step({"w": holder}, {"w": np.array([grad])}, state)
    return float(holder.data[0])
