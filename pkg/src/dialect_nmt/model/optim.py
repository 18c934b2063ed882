"""Adam with bias correction."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


class DivergenceError(FloatingPointError):
    """A non-finite loss or gradient; the run cannot continue."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


@dataclass
class AdamState:
    step: int = 0
    m: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    v: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    @classmethod
    def fresh(cls, params) -> "AdamState":
        return cls(
            0,
            OrderedDict((k, np.zeros_like(a)) for k, a in params.items()),
            OrderedDict((k, np.zeros_like(a)) for k, a in params.items()),
        )


def optimizer_step(params, grads, state: AdamState | None, lr: float):
    """One Adam update. Returns ``(new_params, new_state)``; inputs are untouched."""
    if state is None:
        state = AdamState.fresh(params)
    for name, g in grads.items():
        if name not in params or g.shape != params[name].shape:
            raise ValueError(f"gradient {name!r} does not match any parameter shape")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in {name!r}")
    if set(grads) != set(params):
        raise ValueError("gradients and parameters cover different tensors")

    t = state.step + 1
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    new_params, new_m, new_v = OrderedDict(), OrderedDict(), OrderedDict()
    for name, p in params.items():
        g = grads[name]
        m = BETA1 * state.m[name] + (1.0 - BETA1) * g
        v = BETA2 * state.v[name] + (1.0 - BETA2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + EPSILON)
        new_params[name] = (p - update).astype(p.dtype, copy=False)
        new_m[name] = m.astype(p.dtype, copy=False)
        new_v[name] = v.astype(p.dtype, copy=False)
    return new_params, AdamState(t, new_m, new_v)
