"""Domain/gradient-interval instrumentation and sample-quality metrics."""

import json
import math
import warnings

import numpy as np

from . import losses
from .errors import UsageError

TRACE_KEYS = ("iter", "omega", "omega_fake", "psi", "loss_d", "loss_g")


def record_interval(scores):
    s = np.ravel(np.asarray(getattr(scores, "value", scores), dtype=np.float64))
    if s.size == 0:
        raise UsageError("cannot take the interval of an empty batch")
    return [float(s.min()), float(s.max())]


def hull(a, b):
    return [min(a[0], b[0]), max(a[1], b[1])]


def attained_gradient_interval(spec, term, scores):
    """[min, max] of the loss-term slope over the given scores."""
    s = np.ravel(np.asarray(getattr(scores, "value", scores), dtype=np.float64))
    if s.size == 0:
        raise UsageError("cannot take the interval of an empty batch")
    g = np.atleast_1d(losses.pointwise_grad(spec, term, s))
    return [float(g.min()), float(g.max())]


class DomainTrace:
    """Per-iteration Omega/Psi records plus the running union of domains.

    Each record holds at least ``iter``, ``omega`` (hull of real and fake
    scores), ``omega_fake``, ``psi`` (attained slopes of the real term),
    ``loss_d`` and ``loss_g``; extra keys are kept as-is.
    """

    def __init__(self, records=None):
        self.records = []
        self.omega_union = None
        for r in records or ():
            self.append(r)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def append(self, record):
        for key in ("omega", "psi"):
            lo, hi = record[key]
            if not lo <= hi and not (math.isnan(lo) or math.isnan(hi)):
                raise UsageError(f"{key} interval [{lo}, {hi}] is inverted")
        self.records.append(record)
        om = record["omega"]
        if all(math.isfinite(v) for v in om):
            self.omega_union = list(om) if self.omega_union is None else hull(self.omega_union, om)

    def widths(self, key="omega"):
        return np.array([r[key][1] - r[key][0] for r in self.records])

    def column(self, key):
        return [r[key] for r in self.records]

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r, allow_nan=True) + "\n")

    @classmethod
    def from_jsonl(cls, path):
        with open(path) as fh:
            return cls([json.loads(line) for line in fh if line.strip()])


def domain_drift(trace, window=1):
    """Interval midpoints and their change over ``window`` steps.

    Accepts a DomainTrace or a list of [lo, hi] intervals. Returns
    ``(midpoints, drift)``; when the trace is shorter than the window the
    drift is the single end-to-end change.
    """
    intervals = trace.column("omega") if isinstance(trace, DomainTrace) else list(trace)
    if not intervals:
        raise UsageError("empty trace")
    if window < 1:
        raise UsageError("window must be >= 1")
    m = np.array([(lo + hi) / 2.0 for lo, hi in intervals])
    if window >= len(m):
        return m, np.array([abs(m[-1] - m[0])])
    return m, np.abs(m[window:] - m[:-window])


def _sqrtm_psd(a):
    w, v = np.linalg.eigh((a + a.T) / 2.0)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_from_moments(mu1, cov1, mu2, cov2):
    mu1, mu2 = np.atleast_1d(mu1), np.atleast_1d(mu2)
    cov1, cov2 = np.atleast_2d(cov1), np.atleast_2d(cov2)
    r = _sqrtm_psd(cov1)
    mid = r @ cov2 @ r
    ev = np.linalg.eigvalsh((mid + mid.T) / 2.0)
    tr_sqrt = float(np.sum(np.sqrt(np.clip(ev, 0.0, None))))
    d2 = float(np.sum((mu1 - mu2) ** 2) + np.trace(cov1) + np.trace(cov2) - 2.0 * tr_sqrt)
    return math.sqrt(max(d2, 0.0))


def _moments(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n < d + 1:
        raise UsageError(f"need at least {d + 1} samples in {d} dimensions, got {n}")
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    if np.linalg.eigvalsh(cov)[0] <= 1e-12 * max(1.0, float(np.trace(cov))):
        warnings.warn("degenerate sample covariance; adding 1e-9*I")
        cov = cov + 1e-9 * np.eye(d)
    return x.mean(axis=0), cov


def frechet_gaussian(samples_a, samples_b):
    """Frechet distance between Gaussians fitted to two sample sets."""
    if not (np.all(np.isfinite(samples_a)) and np.all(np.isfinite(samples_b))):
        return math.nan
    mu1, c1 = _moments(samples_a)
    mu2, c2 = _moments(samples_b)
    return frechet_from_moments(mu1, c1, mu2, c2)


def mode_coverage(samples, centers, radius):
    """(modes covered, share of samples within ``radius`` of some center).

    A mode counts as covered when at least max(1, N/(10K)) samples land
    within ``radius`` of it.
    """
    centers = np.asarray(centers, dtype=np.float64)
    if centers.size == 0:
        raise UsageError("no centers given")
    if radius <= 0:
        raise UsageError("radius must be positive")
    x = np.asarray(samples, dtype=np.float64)
    n, k = x.shape[0], centers.shape[0]
    if n == 0 or not np.all(np.isfinite(x)):
        return 0, 0.0
    d = np.linalg.norm(x[:, None, :] - centers[None, :, :], axis=2)
    near = d <= radius
    need = max(1.0, n / (10.0 * k))
    covered = int(np.sum(near.sum(axis=0) >= need))
    return covered, float(np.mean(near.any(axis=1)))
