"""GAN loss zoo with domain scaling and pointwise gradient analysis.

Every loss is a sum of per-sample terms ``l(f)`` applied to raw scores:
the real and fake terms of the discriminator loss and the generator term.
Domain scaling replaces each term by ``l_alpha(t) = l(alpha * t) / alpha``,
which keeps the gradient scale while squeezing the domain the loss sees.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, UsageError

KINDS = ("NS", "LS", "LS#", "WGAN", "COS", "EXP")
TERMS = ("real", "fake", "gen")
ALPHA_FLOOR = 1e-25


@dataclass(frozen=True)
class LossSpec:
    kind: str = "NS"
    alpha: float = 1.0

    def __post_init__(self):
        kind = self.kind.upper()
        if kind not in KINDS:
            raise ConfigurationError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        alpha = float(self.alpha)
        if not alpha >= ALPHA_FLOOR or not math.isfinite(alpha):
            raise ConfigurationError(f"alpha must be finite and >= {ALPHA_FLOOR}, got {self.alpha}")
        object.__setattr__(self, "alpha", alpha)


def _check_term(term):
    if term not in TERMS:
        raise UsageError(f"term must be one of {TERMS}, got {term!r}")


# --- per-term value, first and second derivative on unscaled input t ------
# (kind, term) -> (tensor fn, numpy value, numpy d1, numpy d2)

def _sig(t):
    e = np.exp(-np.abs(t))
    return np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus(t):
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


_NS_REAL = (
    lambda t: ad.softplus(-t),  # -log(sigmoid(t))
    lambda t: _softplus(-t),
    lambda t: _sig(t) - 1.0,
    lambda t: _sig(t) * (1.0 - _sig(t)),
)
_NS_FAKE = (
    lambda t: ad.softplus(t),  # -log(1 - sigmoid(t))
    _softplus,
    _sig,
    lambda t: _sig(t) * (1.0 - _sig(t)),
)
_SQ_MINUS1 = (
    lambda t: ad.square(t - 1.0),
    lambda t: (t - 1.0) ** 2,
    lambda t: 2.0 * (t - 1.0),
    lambda t: np.full_like(t, 2.0),
)
_SQ = (ad.square, np.square, lambda t: 2.0 * t, lambda t: np.full_like(t, 2.0))
_SQ_PLUS1 = (
    lambda t: ad.square(t + 1.0),
    lambda t: (t + 1.0) ** 2,
    lambda t: 2.0 * (t + 1.0),
    lambda t: np.full_like(t, 2.0),
)
_LIN = (lambda t: t, lambda t: t, np.ones_like, np.zeros_like)
_NEG_LIN = (lambda t: -t, lambda t: -t, lambda t: -np.ones_like(t), np.zeros_like)
_COS_M1 = (
    lambda t: -ad.cos(t - 1.0),
    lambda t: -np.cos(t - 1.0),
    lambda t: np.sin(t - 1.0),
    lambda t: np.cos(t - 1.0),
)
_COS_P1 = (
    lambda t: -ad.cos(t + 1.0),
    lambda t: -np.cos(t + 1.0),
    lambda t: np.sin(t + 1.0),
    lambda t: np.cos(t + 1.0),
)
_EXP = (ad.exp, np.exp, np.exp, np.exp)
_EXP_NEG = (
    lambda t: ad.exp(-t),
    lambda t: np.exp(-t),
    lambda t: -np.exp(-t),
    lambda t: np.exp(-t),
)

_TERMS = {
    ("NS", "real"): _NS_REAL, ("NS", "fake"): _NS_FAKE, ("NS", "gen"): _NS_REAL,
    ("LS", "real"): _SQ_MINUS1, ("LS", "fake"): _SQ, ("LS", "gen"): _SQ_MINUS1,
    ("LS#", "real"): _SQ_MINUS1, ("LS#", "fake"): _SQ_PLUS1, ("LS#", "gen"): _SQ_MINUS1,
    ("WGAN", "real"): _LIN, ("WGAN", "fake"): _NEG_LIN, ("WGAN", "gen"): _LIN,
    ("COS", "real"): _COS_M1, ("COS", "fake"): _COS_P1, ("COS", "gen"): _COS_M1,
    ("EXP", "real"): _EXP, ("EXP", "fake"): _EXP_NEG, ("EXP", "gen"): _EXP,
}


# Fused ops: one tape node per term, with slope and curvature as their own
# ops so a term stays twice differentiable.

def _term_fwd(t, kind, term, alpha):
    return _TERMS[kind, term][1](alpha * t) / alpha


def _slope_fwd(t, kind, term, alpha):
    return _TERMS[kind, term][2](alpha * t)


def _curv_fwd(t, kind, term, alpha):
    return alpha * _TERMS[kind, term][3](alpha * t)


def _no_third(*args, **kw):
    raise UsageError("loss terms support at most two derivatives")


ad.register_op(
    "loss_term", _term_fwd,
    lambda out, g, needs, t, **a: (g * ad.apply("loss_slope", t, **a),),
    lambda out, g, needs, t, **a: (g * _slope_fwd(t, **a),),
)
ad.register_op(
    "loss_slope", _slope_fwd,
    lambda out, g, needs, t, **a: (g * ad.apply("loss_curv", t, **a),),
    lambda out, g, needs, t, **a: (g * _curv_fwd(t, **a),),
)
ad.register_op("loss_curv", _curv_fwd, _no_third, _no_third)


def _scaled_term(spec, term, scores):
    return ad.apply("loss_term", scores, kind=spec.kind, term=term, alpha=spec.alpha)


def composed_term(spec, term, scores):
    """The same term built from elementary ops (cross-check of the fused op)."""
    t = _flat(scores)
    fn = _TERMS[spec.kind, term][0]
    if spec.alpha == 1.0:
        return fn(t).mean()
    return (fn(t * spec.alpha) * (1.0 / spec.alpha)).mean()


def _flat(scores):
    t = ad.as_tensor(scores)
    if t.value.ndim != 1:
        t = ad.reshape(t, (t.size,))
    if t.size == 0:
        raise UsageError("loss needs a nonempty batch")
    return t


def term_loss(spec, term, scores):
    """Batch mean of one scaled loss term, as a tape-differentiable scalar."""
    _check_term(term)
    return _scaled_term(spec, term, _flat(scores)).mean()


def disc_loss(spec, f_real, f_fake):
    return term_loss(spec, "real", f_real) + term_loss(spec, "fake", f_fake)


def gen_loss(spec, f_fake):
    return term_loss(spec, "gen", f_fake)


def term_value(spec, term, omega):
    """Scaled per-sample loss ``l(alpha*w)/alpha`` (numpy, elementwise)."""
    _check_term(term)
    w = np.asarray(omega, dtype=np.float64)
    return _TERMS[spec.kind, term][1](spec.alpha * w) / spec.alpha


def pointwise_grad(spec, term, omega):
    """d l_alpha / d omega, which equals l'(alpha * omega)."""
    _check_term(term)
    w = np.asarray(omega, dtype=np.float64)
    g = _TERMS[spec.kind, term][2](spec.alpha * w)
    return float(g) if g.ndim == 0 else g


def second_derivative(spec, term, omega):
    _check_term(term)
    w = np.asarray(omega, dtype=np.float64)
    g = spec.alpha * _TERMS[spec.kind, term][3](spec.alpha * w)
    return float(g) if g.ndim == 0 else g


def degenerate_limit_grad(spec, term):
    """The constant slope l'(0) every scaled loss tends to as alpha -> 0."""
    _check_term(term)
    return float(_TERMS[spec.kind, term][2](np.float64(0.0)))


def _interval(omega):
    lo, hi = (float(v) for v in omega)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise UsageError("interval endpoints must be finite")
    if lo > hi:
        raise UsageError(f"inverted interval [{lo}, {hi}]")
    return lo, hi


def _critical_points(kind, term, lo, hi):
    """Points in [lo, hi] (scaled domain) where |l''| may peak in the interior."""
    if kind == "NS":
        return [0.0] if lo < 0.0 < hi else []
    if kind == "COS":
        shift = -1.0 if term in ("real", "gen") else 1.0
        # |cos(t + shift)| peaks where t + shift is a multiple of pi
        k0 = math.ceil((lo + shift) / math.pi)
        k1 = math.floor((hi + shift) / math.pi)
        return [k * math.pi - shift for k in range(k0, min(k1, k0 + 1) + 1)]
    return []


def slope_range(spec, omega, term="real"):
    """[min, max] of the slope over the closed interval, interior extremes included.

    Only COS has interior extremes: its slope sin(t + shift) peaks where
    t + shift = pi/2 + k*pi.
    """
    _check_term(term)
    lo, hi = _interval(omega)
    pts = [lo, hi]
    a = spec.alpha
    if spec.kind == "COS":
        shift = -1.0 if term in ("real", "gen") else 1.0
        k0 = math.ceil((a * lo + shift - math.pi / 2) / math.pi)
        k1 = math.floor((a * hi + shift - math.pi / 2) / math.pi)
        for k in range(k0, min(k1, k0 + 1) + 1):
            pts.append((math.pi / 2 + k * math.pi - shift) / a)
    g = pointwise_grad(spec, term, np.array([p for p in pts if lo <= p <= hi]))
    return [float(np.min(g)), float(np.max(g))]


def second_derivative_max(spec, omega, term="real", method="closed"):
    """M = max over the interval of |l_alpha''|.

    ``method="scan"`` uses a 4096-point grid plus golden-section refinement
    of the best cell and serves as a cross-check of the closed form.
    """
    _check_term(term)
    lo, hi = _interval(omega)
    if spec.kind == "WGAN":
        return 0.0
    f = lambda w: np.abs(second_derivative(spec, term, w))
    if method == "scan":
        return _scan_max(f, lo, hi)
    a = spec.alpha
    cands = [lo, hi] + [c / a for c in _critical_points(spec.kind, term, a * lo, a * hi)]
    cands = [c for c in cands if lo <= c <= hi]
    return float(np.max(f(np.array(cands))))


def _scan_max(f, lo, hi, n=4096):
    if hi == lo:
        return float(f(np.array([lo]))[0])
    grid = np.linspace(lo, hi, n)
    vals = f(grid)
    i = int(np.argmax(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, n - 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = float(f(np.array([c]))[0]), float(f(np.array([d]))[0])
    for _ in range(80):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = float(f(np.array([c]))[0])
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = float(f(np.array([d]))[0])
    return float(max(vals[i], fc, fd))


def linearity_deviation(loss, omega, term="real", grad=None, n=2049):
    """Worst gap between a loss and its tangent at the interval midpoint.

    ``loss`` is a LossSpec (scaled term ``term`` is used) or any vectorized
    callable; for callables ``grad`` gives the derivative, defaulting to a
    central difference. The gap is normalized by max |loss| on the interval.
    """
    lo, hi = _interval(omega)
    if isinstance(loss, LossSpec):
        if loss.kind == "WGAN":
            return 0.0
        value = lambda w: term_value(loss, term, w)
        slope = lambda w: pointwise_grad(loss, term, w)
    else:
        value = loss
        if grad is None:
            h = 1e-6 * max(1.0, abs(lo), abs(hi))
            slope = lambda w: (loss(w + h) - loss(w - h)) / (2.0 * h)
        else:
            slope = grad
    w = np.linspace(lo, hi, n)
    v = np.asarray(value(w), dtype=np.float64)
    mid = 0.5 * (lo + hi)
    v0 = float(np.asarray(value(np.array([mid])))[0])
    s0 = float(np.asarray(slope(np.array([mid])))[0])
    dev = np.max(np.abs(v - (v0 + s0 * (w - mid))))
    return float(dev / max(float(np.max(np.abs(v))), 1e-12))
