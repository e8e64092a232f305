"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumericsError, Tensor


@dataclass
class AdamWState:
    """Moment estimates and step counter for one parameter set.

    Decay is decoupled: it shrinks the weights directly and never enters the
    moment estimates. step_count increases by exactly 1 per step.
    """

    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], state: AdamWState, grad_clip: float | None = None) -> None:
    """One bias-corrected AdamW update over `params`, in place.

    Parameters with grad=None are treated as zero-gradient (they still decay).
    Non-finite gradients abort with a diagnostic naming the parameter.
    """
    b1, b2 = state.betas
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t

    grads: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericsError(
                f"non-finite gradient for '{name}' at step {t} "
                f"(|g|_max={np.abs(g[np.isfinite(g)]).max() if np.isfinite(g).any() else 'n/a'})"
            )
        grads[name] = g

    if grad_clip is not None:
        total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if total > grad_clip:
            scale = grad_clip / (total + 1e-12)
            grads = {k: g * scale for k, g in grads.items()}

    for name, p in params.items():
        g = grads[name]
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        if state.weight_decay:
            p.data *= 1.0 - state.lr * state.weight_decay
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
