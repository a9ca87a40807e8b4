"""Adam with global-norm gradient clipping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()}, **kw)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_by_global_norm(grads: dict, clip_norm: float) -> tuple[dict, float]:
    """Scale every gradient by ``clip_norm / norm`` when the global norm exceeds it."""
    norm = global_norm(grads)
    if norm > clip_norm:
        scale = clip_norm / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return grads, norm


def adam_step(params, grads: dict, state: AdamState, lr: float, clip_norm: float | None = None):
    """Clip, update moments, apply one bias-corrected Adam step in place.

    ``params`` is anything with ``items()`` over named arrays. Returns
    ``(params, state, pre_clip_norm)``.
    """
    names = [k for k, _ in params.items()]
    if set(names) != set(grads):
        raise ShapeMismatch("gradient names do not match parameters")
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient {grads[name].shape} vs parameter {p.shape}")
    if clip_norm is not None:
        grads, norm = clip_by_global_norm(grads, clip_norm)
    else:
        norm = global_norm(grads)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params, state, norm
