"""Adam with bias correction and the warmup+cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(named_params, named_grads, state: AdamState, lr: float,
              frozen: frozenset | set = frozenset()) -> None:
    """One in-place Adam update over name-aligned parameter/gradient pairs.

    Frozen tensors are skipped entirely: values, moments and bias-correction
    bookkeeping for them never change.
    """
    state.step += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    bias1 = 1.0 - b1 ** state.step
    bias2 = 1.0 - b2 ** state.step
    for (name, param), (gname, grad) in zip(named_params, named_grads):
        if name != gname:
            raise ValidationError(f"parameter/gradient name mismatch: {name} vs {gname}")
        if name in frozen:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(param)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(param)
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        m_hat = m / bias1
        v_hat = v / bias2
        param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def lr_at_step(step: int, *, base_lr: float, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup to base_lr over ``warmup_steps``, then a cosine decay to 0.

    Step s < W:  base * (s + 1) / W
    Step s >= W: base * 0.5 * (1 + cos(pi * (s - W) / (T - W)))
    """
    if total_steps < 1:
        raise ValidationError("total_steps must be >= 1")
    if not 0 <= warmup_steps < total_steps:
        raise ValidationError(
            f"warmup_steps ({warmup_steps}) must be < total_steps ({total_steps})")
    if step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = total_steps - warmup_steps
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * (step - warmup_steps) / span))


def global_grad_norm(named_grads, frozen: frozenset | set = frozenset()) -> float:
    total = 0.0
    for name, grad in named_grads:
        if name in frozen:
            continue
        total += float((grad * grad).sum())
    return math.sqrt(total)


def clip_grads_(named_grads, max_norm: float,
                frozen: frozenset | set = frozenset()) -> float:
    """Scale all live gradients so their global norm is at most max_norm."""
    norm = global_grad_norm(named_grads, frozen)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for name, grad in named_grads:
            if name not in frozen:
                grad *= scale
    return norm
