"""AdamW with decoupled weight decay and a per-epoch cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    base_lr: float = 1e-3
    total_epochs: int = 300
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def cosine_lr(epoch: int, total_epochs: int, base_lr: float) -> float:
    """Learning rate for ``epoch`` under cosine decay from ``base_lr`` to 0."""
    if total_epochs <= 0:
        raise ValueError("cosine_lr: total_epochs must be positive")
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"cosine_lr: epoch {epoch} outside [0, {total_epochs})")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float | None = None,
    weight_decay: float = 0.0,
) -> None:
    """Apply one AdamW update in place.

    ``grads`` maps parameter names to gradients; names without an entry are
    treated as having zero gradient. ``lr`` defaults to ``state.base_lr``.
    """
    lr = state.base_lr if lr is None else lr
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {name!r} shape {p.data.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = BETA1 * m + (1.0 - BETA1) * g
        v = BETA2 * v + (1.0 - BETA2) * g * g
        state.m[name] = m
        state.v[name] = v
        update = (m / c1) / (np.sqrt(v / c2) + EPS)
        if weight_decay:
            p.data = p.data - lr * weight_decay * p.data
        p.data = p.data - lr * update
