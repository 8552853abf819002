"""Command-line front end: ``lipgan train|sweep|analyze|verify``."""

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import lipschitz as lip
from . import losses
from . import metrics as mx
from . import nn
from .config import ExperimentConfig, parse_set_args
from .errors import ConfigurationError, UsageError
from .plots import emit_plots

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, with the help text attached."""

    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_help()}")


def _common(p):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. loss.alpha=1e-9 (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--quiet", action="store_true")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser():
    p = _Parser(prog="lipgan", description="Lipschitz-regularized GAN lab on toy data.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="run one experiment")
    _common(t)

    s = sub.add_parser("sweep", help="run a k_sn x alpha x loss x seed grid")
    _common(s)
    s.add_argument("--k-sn", type=_float_list, help="comma-separated k_sn values")
    s.add_argument("--alpha", type=_float_list, help="comma-separated alpha values")
    s.add_argument("--loss", type=lambda v: [x for x in v.split(",") if x], help="comma-separated loss kinds")
    s.add_argument("--seeds", type=_int_list, help="comma-separated seeds")
    s.add_argument("--workers", type=int)

    a = sub.add_parser("analyze", help="recompute Omega/Psi/drift/linearity from a trace")
    a.add_argument("trace", help="trace.jsonl")
    a.add_argument("--loss", default="NS")
    a.add_argument("--alpha", type=float, default=1.0)
    a.add_argument("--term", default="real", choices=losses.TERMS)
    a.add_argument("--window", type=int, default=100)
    a.add_argument("--out", help="write the JSON report here instead of stdout")
    a.add_argument("--quiet", action="store_true")

    v = sub.add_parser("verify", help="run the bound and gradient property suite")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--quiet", action="store_true")
    return p


def load_config(args):
    cfg = ExperimentConfig()
    if args.config:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            cfg = ExperimentConfig.from_json(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    overrides = parse_set_args(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    return cfg.replace(**overrides) if overrides else cfg


def cmd_train(args):
    cfg = load_config(args)
    out = Path(args.out or "runs/train")
    from .trainer import train

    art = train(cfg, out_dir=out, progress=not args.quiet)
    emit_plots(out)
    m = art.final_metrics
    if not args.quiet:
        print(f"status={art.status} iterations={len(art.trace)} frechet={m.get('frechet')} "
              f"coverage={m.get('coverage')} hq_fraction={m.get('hq_fraction')} "
              f"bound_violations={art.bound_violations} -> {out}")
    return EXIT_OK if art.status == "ok" else EXIT_FAIL


def cmd_sweep(args):
    cfg = load_config(args)
    out = Path(args.out or "runs/sweep")
    out.mkdir(parents=True, exist_ok=True)
    from .trainer import sweep

    (out / "config.json").write_text(cfg.to_json(indent=2) + "\n")
    rows = sweep(cfg, args.k_sn, args.alpha, args.loss, args.seeds, args.workers, out / "sweep.csv")
    emit_plots(out)
    if not args.quiet:
        for r in rows:
            if r["seed"] == "median" or not any(x["seed"] == "median" for x in rows):
                print(f"{r['loss']:>5} alpha={r['alpha']:<8g} k_sn={r['k_sn']:<6g} frechet={r['frechet']:.4g} "
                      f"coverage={r['coverage']} hq={r['hq_fraction']:.3f} {r['status']}")
    return EXIT_OK


def analyze_trace(records, spec, term="real", window=100):
    """Per-record Psi recomputed from the logged Omega, plus drift and linearity.

    ``psi`` evaluates the slope at the logged endpoints; ``psi_interval`` is
    the slope range over the whole closed interval.
    """
    rows = []
    for r in records:
        lo, hi = r["omega"]
        row = {"iter": r["iter"], "omega": [lo, hi]}
        if math.isfinite(lo) and math.isfinite(hi):
            row["psi"] = mx.attained_gradient_interval(spec, term, np.array([lo, hi]))
            row["psi_interval"] = losses.slope_range(spec, (lo, hi), term)
            row["M"] = losses.second_derivative_max(spec, (lo, hi), term)
            row["psi_bound"] = row["M"] * (hi - lo)
            row["linearity"] = losses.linearity_deviation(spec, (lo, hi), term)
        rows.append(row)
    report = {"loss": spec.kind, "alpha": spec.alpha, "term": term, "records": rows}
    if records:
        mids, drift = mx.domain_drift([r["omega"] for r in records], window)
        half = len(drift) // 2
        report["drift"] = {
            "window": window,
            "early_median": float(np.median(drift[:max(half, 1)])),
            "late_median": float(np.median(drift[half:])),
        }
        union = mx.DomainTrace(records).omega_union
        report["omega_union"] = union
        if union is not None:
            report["linearity_union"] = losses.linearity_deviation(spec, union, term)
    return report


def cmd_analyze(args):
    path = Path(args.trace)
    try:
        records = mx.DomainTrace.from_jsonl(path).records
    except OSError as exc:
        raise OSError(f"cannot read trace {path}: {exc.strerror}") from None
    report = analyze_trace(records, losses.LossSpec(args.loss, args.alpha), args.term, args.window)
    text = json.dumps(report, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    elif not args.quiet:
        print(text)
    return EXIT_OK


# --- verify: a fast property suite --------------------------------------------

def _check_gradients(rng):
    worst = 0.0
    for kind in losses.KINDS:
        for term in losses.TERMS:
            spec = losses.LossSpec(kind, 1.0)
            fn = lambda t: losses.term_loss(spec, term, t)
            worst = max(worst, ad.finite_diff_check(fn, rng.normal(scale=0.5, size=6)))
    cfg = nn.MlpConfig([2, 8, 8, 1], "leaky_relu", 0.2)
    p = nn.init_params(cfg, rng)
    x = rng.uniform(-1, 1, size=(5, 2))
    shapes = p.shapes()

    def net(flat):
        ts, i = [], 0
        for shp in shapes:
            n = math.prod(shp)
            ts.append(ad.reshape(ad.rows(flat, i, i + n), shp))
            i += n
        return losses.disc_loss(losses.LossSpec("NS"), nn.scores(nn.ParamStore.from_tensors(ts), cfg, x), 0.3)

    worst = max(worst, ad.finite_diff_check(net, p.flat()))
    return worst < 1e-5, f"max relative error {worst:.2e}"


def _check_gp(rng):
    cfg = nn.MlpConfig([2, 6, 1], "leaky_relu", 0.2)
    p = nn.init_params(cfg, rng)
    xr, xf = rng.uniform(-1, 1, (4, 2)), rng.uniform(-1, 1, (4, 2))
    gp = lip.GpConfig(10.0, 1.0)
    seed = int(rng.integers(1 << 30))

    def penalty(w):
        D = lambda x: nn.scores(nn.ParamStore([w] + p.weights[1:], p.biases), cfg, x)
        return lip.gradient_penalty(D, xr, xf, gp, np.random.default_rng(seed))

    err = ad.finite_diff_check(penalty, p.weights[0])
    return err < 1e-4, f"max relative error {err:.2e}"


def _check_sn(rng):
    worst = 0.0
    for k in (0.25, 1.0, 5.0):
        w = rng.normal(size=(7, 5))
        st = lip.init_sn_state(w, k, 1, rng)
        wn = lip.sn_weight(w, st).value
        worst = max(worst, abs(lip.spectral_norm(wn) - k) / k)
    return worst < 1e-3, f"max relative deviation {worst:.2e}"


def _check_domain_bound(rng):
    cfg = nn.MlpConfig([2, 16, 16, 1], "leaky_relu", 0.2)
    p = nn.init_params(cfg, rng)
    states = lip.init_sn_states(p, 1.0, 1, rng)
    ws = [w.value for w in lip.spectral_normalize(p, states)]
    x = rng.uniform(-1, 1, size=(4096, 2))
    f = nn.scores(p, cfg, x, ws).value
    bound = lip.domain_bound(lip.lipschitz_upper_bound(ws), (2,))
    return f.max() - f.min() <= bound + 1e-6, f"range {f.max() - f.min():.3g} <= bound {bound:.3g}"


def _check_slope_bound(rng):
    ok = True
    for kind in losses.KINDS:
        spec = losses.LossSpec(kind)
        for _ in range(20):
            s = rng.normal(scale=rng.uniform(0.01, 3.0), size=16) + rng.normal()
            lo, hi = mx.record_interval(s)
            psi = mx.attained_gradient_interval(spec, "real", s)
            M = losses.second_derivative_max(spec, (lo, hi), "real")
            ok &= psi[1] - psi[0] <= M * (hi - lo) + 1e-9
    return ok, "slope spread <= M * |Omega| for all six losses"


def _check_degenerate(rng):
    worst = 0.0
    for kind in losses.KINDS:
        spec = losses.LossSpec(kind, losses.ALPHA_FLOOR)
        w = rng.uniform(-1e3, 1e3, size=64)
        for term in losses.TERMS:
            worst = max(worst, float(np.max(np.abs(losses.pointwise_grad(spec, term, w)
                                                    - losses.degenerate_limit_grad(spec, term)))))
    return worst <= 1e-9, f"max |grad - grad(0)| {worst:.1e}"


VERIFY_CHECKS = (
    ("gradients (loss zoo and composed discriminator)", _check_gradients),
    ("double-backprop gradient penalty", _check_gp),
    ("spectral normalization exactness", _check_sn),
    ("domain bound on a normalized network", _check_domain_bound),
    ("attained-slope bound", _check_slope_bound),
    ("degenerate-limit slopes", _check_degenerate),
)


def run_verify(seed=0, quiet=False):
    rng = np.random.default_rng(seed)
    all_ok = True
    for name, check in VERIFY_CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = check(rng)
        except Exception as exc:  # a crash is a failed check, reported like one
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= bool(ok)
        if not quiet:
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail} ({time.perf_counter() - t0:.2f}s)")
    return all_ok


def cmd_verify(args):
    return EXIT_OK if run_verify(args.seed, args.quiet) else EXIT_FAIL


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "analyze": cmd_analyze, "verify": cmd_verify}


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return exc.code or 0
    if args.command is None:
        print(parser.format_help(), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
