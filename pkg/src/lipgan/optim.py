"""RMSProp, the optimizer used for both networks."""

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, UsageError


@dataclass
class RmsPropState:
    lr: float = 5e-5
    rho: float = 0.9
    eps: float = 1e-8
    ms: list = field(default_factory=list)
    steps: int = 0

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise UsageError("rho must lie in (0, 1)")
        if self.eps <= 0 or self.lr <= 0:
            raise UsageError("lr and eps must be positive")


def rmsprop_step(params, grads, state, iteration=None):
    """One RMSProp update; returns the new parameter arrays.

    ms <- rho*ms + (1-rho)*g^2 ;  theta <- theta - lr*g/(sqrt(ms)+eps)

    A non-finite gradient aborts the step before any state changes.
    """
    params = [np.asarray(p, dtype=np.float64) for p in params]
    grads = [np.asarray(getattr(g, "value", g), dtype=np.float64) for g in grads]
    if len(params) != len(grads):
        raise UsageError("one gradient per parameter is required")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise UsageError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            where = f" at iteration {iteration}" if iteration is not None else ""
            raise NonFiniteError(f"non-finite gradient for parameter {i}{where}", iteration)
    if not state.ms:
        state.ms = [np.zeros_like(p) for p in params]
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        ms = state.rho * state.ms[k] + (1.0 - state.rho) * g * g
        state.ms[k] = ms
        out.append(p - state.lr * g / (np.sqrt(ms) + state.eps))
    state.steps += 1
    return out
