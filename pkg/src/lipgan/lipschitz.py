"""Lipschitz control and bounds: spectral normalization, gradient penalty,
domain/gradient-interval bounds and Lipschitz-constant estimates."""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import UsageError

COLD_START_ITERS = 50


@dataclass
class SnState:
    """Power-iteration state for one weight matrix W of shape [in, out].

    ``u`` estimates the leading left singular vector (length ``in``) and is
    carried across training steps.
    """

    k_sn: float
    u: np.ndarray
    power_iters: int = 1
    v: np.ndarray = None
    sigma: float = 0.0
    degenerate: bool = False

    def __post_init__(self):
        if self.k_sn <= 0:
            raise UsageError("k_sn must be positive")
        if self.power_iters < 1:
            raise UsageError("power_iters must be >= 1")
        self.u = np.asarray(self.u, dtype=np.float64)
        self.u = self.u / np.linalg.norm(self.u)


@dataclass
class GpConfig:
    lam: float = 10.0
    k_gp: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise UsageError("gradient-penalty weight must be >= 0")
        if self.k_gp < 0:
            raise UsageError("target gradient norm k_gp must be >= 0")


def spectral_norm(w):
    """Largest singular value via LAPACK SVD (the reference value)."""
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        return 0.0
    return float(np.linalg.svd(w, compute_uv=False)[0])


def _power_step(w, u):
    v = w.T @ u
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return None, None
    v = v / nv
    u = w @ v
    nu = np.linalg.norm(u)
    if nu == 0.0:
        return None, None
    return u / nu, v


def power_iteration(w, state, iters=None):
    """Advance ``state`` by ``iters`` power iterations and return sigma-hat.

    The estimate is the bilinear Rayleigh quotient u^T W v with unit u, v,
    so it never exceeds the true spectral norm.
    """
    w = np.asarray(w, dtype=np.float64)
    n = state.power_iters if iters is None else iters
    u = state.u
    v = state.v
    for _ in range(n):
        u_new, v_new = _power_step(w, u)
        if u_new is None:
            state.degenerate = True
            state.sigma = 0.0
            return 0.0
        u, v = u_new, v_new
    state.u, state.v = u, v
    state.degenerate = False
    state.sigma = float(u @ w @ v)
    return state.sigma


def init_sn_state(w, k_sn, power_iters=1, rng=None, cold_start=COLD_START_ITERS, tol=1e-10, max_iters=5000):
    """Random unit start vector followed by a cold-start power iteration.

    Runs at least ``cold_start`` iterations and keeps going (up to
    ``max_iters``) until the singular-pair residual drops below ``tol``.
    """
    w = np.asarray(w, dtype=np.float64)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    u = rng.normal(size=w.shape[0])
    if not np.any(u):
        u[0] = 1.0
    state = SnState(float(k_sn), u, int(power_iters))
    sigma = power_iteration(w, state, cold_start)
    done = cold_start
    while sigma > 0 and done < max_iters:
        resid = np.linalg.norm(w @ state.v - sigma * state.u) + np.linalg.norm(w.T @ state.u - sigma * state.v)
        if resid <= tol * sigma:
            break
        sigma = power_iteration(w, state, 10)
        done += 10
    return state


def init_sn_states(params, k_sn, power_iters=1, rng=None):
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return [init_sn_state(np.asarray(w), k_sn, power_iters, rng) for w in params.weights]


def sn_weight(w, state, update=True):
    """k_SN * W / sigma(W) as a tape op.

    sigma is the Rayleigh quotient u^T W v with u, v held constant, so the
    gradient flows through W in both numerator and denominator.
    """
    wt = ad.as_tensor(w)
    if update or state.v is None:
        power_iteration(wt.value, state)
    if state.degenerate or state.sigma == 0.0:
        warnings.warn("spectral normalization skipped for an all-zero weight matrix")
        return wt
    return ad.apply("sn_scale", wt, uv=np.outer(state.u, state.v), k=state.k_sn)


def spectral_normalize(params, states, update=True):
    """Normalized views of every weight matrix (biases are left alone)."""
    if len(states) != params.n_layers:
        raise UsageError("need one SnState per layer")
    return [sn_weight(w, s, update) for w, s in zip(params.weights, states)]


def gradient_penalty(D, x_real, x_fake, cfg, rng):
    """lam * mean((||grad_x D(x_hat)|| - k_gp)^2) on random interpolates.

    Must be called inside an active Tape holding D's parameters; the result
    is differentiable w.r.t. them (double backprop).
    """
    xr = np.asarray(ad.as_tensor(x_real).value)
    xf = np.asarray(ad.as_tensor(x_fake).value)
    if xr.shape != xf.shape:
        raise UsageError(f"real batch {xr.shape} and fake batch {xf.shape} differ in shape")
    tape = ad.active_tape()
    if tape is None:
        raise UsageError("gradient_penalty needs an active tape")
    b = xr.shape[0]
    eps = rng.uniform(size=(b,) + (1,) * (xr.ndim - 1))
    x_hat = tape.watch(eps * xr + (1.0 - eps) * xf)
    out = D(x_hat)
    (gx,) = ad.backward(ad.reduce_sum(out), [x_hat], differentiable=True)
    norms = ad.l2norm(ad.reshape(gx, (b, -1)) if gx.value.ndim != 2 else gx, axis=1)
    return ad.square(norms - cfg.k_gp).mean() * cfg.lam


def domain_bound(k, input_shape, value_range=(-1.0, 1.0)):
    """Diameter bound on the range of a k-Lipschitz f over a box of inputs.

    For images in [-1, 1]^{m x n x 3} this is k * sqrt(12 m n).
    """
    if k < 0:
        raise UsageError("Lipschitz constant must be >= 0")
    lo, hi = value_range
    if hi < lo:
        raise UsageError(f"value range [{lo}, {hi}] is inverted")
    shape = (input_shape,) if isinstance(input_shape, int) else tuple(input_shape)
    n = math.prod(shape)
    return float(k) * (hi - lo) * math.sqrt(n)


def gradient_interval_bound(M, K, input_shape, value_range=(-1.0, 1.0)):
    if M < 0 or K < 0:
        raise UsageError("M and K must be >= 0")
    return float(M) * domain_bound(K, input_shape, value_range)


def empirical_lipschitz(f, samples, pairs, rng):
    """Largest |f(a)-f(b)| / ||a-b|| over random sample pairs (a lower bound)."""
    x = np.asarray(ad.as_tensor(samples).value, dtype=np.float64)
    if x.shape[0] < 2:
        raise UsageError("need at least two samples")
    vals = np.ravel(np.asarray(ad.as_tensor(f(x)).value))
    i = rng.integers(0, x.shape[0], size=pairs)
    j = rng.integers(0, x.shape[0], size=pairs)
    dist = np.linalg.norm((x[i] - x[j]).reshape(pairs, -1), axis=1)
    keep = dist > 0
    if not np.any(keep):
        warnings.warn("all sampled pairs coincide; Lipschitz estimate is 0")
        return 0.0
    return float(np.max(np.abs(vals[i] - vals[j])[keep] / dist[keep]))


def lipschitz_upper_bound(weights, activation_constants=None):
    """Product of layer spectral norms times activation Lipschitz constants."""
    ws = weights.weights if hasattr(weights, "weights") else weights
    bound = 1.0
    for w in ws:
        bound *= spectral_norm(ad.as_tensor(w).value)
    for c in activation_constants or ():
        bound *= c
    return bound
