"""Hand-written SVG plots of run artifacts (no plotting library)."""

import csv
import json
import math
from pathlib import Path
from xml.sax.saxutils import escape

from .errors import UsageError

WIDTH, HEIGHT = 480, 320
MARGIN = (56, 20, 24, 40)  # left, right, top, bottom
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _nice_range(lo, hi):
    if lo is None:
        return 0.0, 1.0
    if hi == lo:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


class Axes:
    """Maps data coordinates to pixels; ``logx`` uses log10 on x."""

    def __init__(self, xlim, ylim, logx=False, width=WIDTH, height=HEIGHT, margin=MARGIN):
        self.logx = logx
        self.width, self.height = width, height
        self.left, self.right, self.top, self.bottom = margin
        x0, x1 = xlim
        if logx:
            if x0 <= 0 or x1 <= 0:
                raise UsageError("log-scaled axis needs positive limits")
            x0, x1 = math.log10(x0), math.log10(x1)
        self.x0, self.x1 = (x0, x1) if x1 > x0 else (x0 - 0.5, x0 + 0.5)
        y0, y1 = ylim
        self.y0, self.y1 = (y0, y1) if y1 > y0 else (y0 - 0.5, y0 + 0.5)

    def px(self, x):
        if self.logx:
            x = math.log10(x)
        span = self.width - self.left - self.right
        return self.left + (x - self.x0) / (self.x1 - self.x0) * span

    def py(self, y):
        span = self.height - self.top - self.bottom
        return self.height - self.bottom - (y - self.y0) / (self.y1 - self.y0) * span

    def frame(self, title="", xlabel="", ylabel=""):
        l, t = self.left, self.top
        r, b = self.width - self.right, self.height - self.bottom
        out = [f'<rect x="{l}" y="{t}" width="{r - l}" height="{b - t}" fill="none" stroke="#000"/>']
        for x, label in self._xticks():
            out.append(f'<line x1="{x:.2f}" y1="{b}" x2="{x:.2f}" y2="{b + 4}" stroke="#000"/>')
            out.append(f'<text x="{x:.2f}" y="{b + 16}" font-size="10" text-anchor="middle">{label}</text>')
        for i in range(5):
            v = self.y0 + (self.y1 - self.y0) * i / 4
            y = self.py(v)
            out.append(f'<line x1="{l - 4}" y1="{y:.2f}" x2="{l}" y2="{y:.2f}" stroke="#000"/>')
            out.append(f'<text x="{l - 6}" y="{y + 3:.2f}" font-size="10" text-anchor="end">{v:.3g}</text>')
        out.append(f'<text x="{(l + r) / 2}" y="{t - 6}" font-size="12" text-anchor="middle">{escape(title)}</text>')
        out.append(f'<text x="{(l + r) / 2}" y="{self.height - 4}" font-size="11" '
                   f'text-anchor="middle">{escape(xlabel)}</text>')
        out.append(f'<text x="12" y="{(t + b) / 2}" font-size="11" text-anchor="middle" '
                   f'transform="rotate(-90 12 {(t + b) / 2})">{escape(ylabel)}</text>')
        return out

    def _xticks(self):
        if self.logx:
            lo, hi = math.ceil(self.x0 - 1e-9), math.floor(self.x1 + 1e-9)
            step = max(1, (hi - lo) // 6 + 1)
            return [(self.px(10.0 ** e), f"1e{e}") for e in range(lo, hi + 1, step)]
        ticks = []
        for i in range(5):
            v = self.x0 + (self.x1 - self.x0) * i / 4
            ticks.append((self.px(v), f"{v:.4g}"))
        return ticks


def document(parts):
    body = "\n".join(parts)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">\n<rect width="100%" height="100%" fill="#fff"/>\n'
            f"{body}\n</svg>\n")


def polyline(ax, xs, ys, color=COLORS[0]):
    pts = " ".join(f"{ax.px(x):.2f},{ax.py(y):.2f}" for x, y in zip(xs, ys))
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'


def interval_band_svg(iters, intervals, title="Omega per iteration"):
    """Band between per-iteration min and max; a zero-height band is drawn as a line."""
    good = [(i, lo, hi) for i, (lo, hi) in zip(iters, intervals)
            if math.isfinite(lo) and math.isfinite(hi)]
    if good:
        xlim = (min(g[0] for g in good), max(g[0] for g in good))
        ylim = _nice_range(min(g[1] for g in good), max(g[2] for g in good))
    else:
        xlim, ylim = (0.0, 1.0), (0.0, 1.0)
    ax = Axes(xlim, ylim)
    parts = ax.frame(title, "iteration", "f range")
    if good:
        top = [f"{ax.px(i):.2f},{ax.py(hi):.2f}" for i, _, hi in good]
        bot = [f"{ax.px(i):.2f},{ax.py(lo):.2f}" for i, lo, _ in reversed(good)]
        parts.append(f'<polygon points="{" ".join(top + bot)}" fill="{COLORS[0]}" '
                     f'fill-opacity="0.35" stroke="{COLORS[0]}" stroke-width="1"/>')
    return document(parts)


def line_plot_svg(series, logx=False, title="", xlabel="", ylabel=""):
    """``series`` maps a label to (xs, ys); non-finite points are dropped."""
    clean = {}
    for name, (xs, ys) in series.items():
        pts = [(float(x), float(y)) for x, y in zip(xs, ys)
               if math.isfinite(float(x)) and math.isfinite(float(y)) and (not logx or float(x) > 0)]
        clean[name] = pts
    allp = [p for pts in clean.values() for p in pts]
    if allp:
        xs = [p[0] for p in allp]
        xlim = (min(xs), max(xs))
        if logx and xlim[0] == xlim[1]:
            xlim = (xlim[0] / 10.0, xlim[1] * 10.0)
        ylim = _nice_range(min(p[1] for p in allp), max(p[1] for p in allp))
    else:
        xlim, ylim = ((1.0, 10.0) if logx else (0.0, 1.0)), (0.0, 1.0)
    ax = Axes(xlim, ylim, logx=logx)
    parts = ax.frame(title, xlabel, ylabel)
    for n, (name, pts) in enumerate(clean.items()):
        color = COLORS[n % len(COLORS)]
        if pts:
            parts.append(polyline(ax, [p[0] for p in pts], [p[1] for p in pts], color))
        parts.append(f'<text x="{ax.left + 6}" y="{ax.top + 14 + 12 * n}" font-size="10" '
                     f'fill="{color}">{escape(str(name))}</text>')
    return document(parts)


def scatter_svg(generated, real=None, title="samples"):
    pts = [tuple(p) for p in generated]
    ref = [tuple(p) for p in real] if real is not None else []
    finite = [p for p in pts + ref if all(math.isfinite(v) for v in p)]
    if finite:
        xlim = _nice_range(min(p[0] for p in finite), max(p[0] for p in finite))
        ylim = _nice_range(min(p[1] for p in finite), max(p[1] for p in finite))
    else:
        xlim, ylim = (-1.0, 1.0), (-1.0, 1.0)
    ax = Axes(xlim, ylim)
    parts = ax.frame(title, "x", "y")
    for group, color in ((ref, "#999999"), (pts, COLORS[1])):
        for x, y in group:
            if math.isfinite(x) and math.isfinite(y):
                parts.append(f'<circle cx="{ax.px(x):.2f}" cy="{ax.py(y):.2f}" r="1.5" fill="{color}"/>')
    return document(parts)


def _read_points(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return [(float(r[0]), float(r[1])) for r in rows[1:] if r]


def _metric_series(out):
    sweep = out / "sweep.csv"
    if sweep.exists():
        with open(sweep, newline="") as fh:
            rows = [r for r in csv.DictReader(fh) if r["seed"] == "median"]
        param = "alpha" if len({r["alpha"] for r in rows}) > 1 else "k_sn"
        series = {}
        for r in rows:
            other = r["k_sn"] if param == "alpha" else r["alpha"]
            key = f'{r["loss"]} ({"k_sn" if param == "alpha" else "alpha"}={other})'
            xs, ys = series.setdefault(key, ([], []))
            xs.append(float(r[param]))
            ys.append(float(r["frechet"]))
        for xs, ys in series.values():
            order = sorted(range(len(xs)), key=xs.__getitem__)
            xs[:], ys[:] = [xs[i] for i in order], [ys[i] for i in order]
        return series, param
    with open(out / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    xs = [float(r["iter"]) for r in rows]
    return {"frechet": (xs, [float(r["frechet"]) for r in rows])}, "iteration"


def emit_plots(run_dir):
    """Write the SVG figures for a run (or sweep) directory; returns their paths."""
    out = Path(run_dir)
    written = []
    trace = out / "trace.jsonl"
    if trace.exists():
        with open(trace) as fh:
            recs = [json.loads(line) for line in fh if line.strip()]
        svg = interval_band_svg([r["iter"] for r in recs], [r["omega"] for r in recs])
        (out / "omega_vs_iter.svg").write_text(svg)
        written.append(out / "omega_vs_iter.svg")
    if (out / "sweep.csv").exists() or (out / "metrics.csv").exists():
        series, param = _metric_series(out)
        svg = line_plot_svg(series, logx=True, title=f"Frechet distance vs {param}",
                            xlabel=param, ylabel="Frechet distance")
        (out / "metric_vs_param.svg").write_text(svg)
        written.append(out / "metric_vs_param.svg")
    if (out / "samples.csv").exists():
        real = _read_points(out / "real_samples.csv") if (out / "real_samples.csv").exists() else None
        svg = scatter_svg(_read_points(out / "samples.csv"), real, "generated (red) vs real (grey)")
        (out / "samples_scatter.svg").write_text(svg)
        written.append(out / "samples_scatter.svg")
    if not written:
        raise FileNotFoundError(f"no trace, metrics or samples files in {out}")
    return written
