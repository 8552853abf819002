"""GAN training loop and parameter sweeps."""

import csv
import json
import logging
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import lipschitz as lip
from . import losses
from . import metrics as mx
from . import nn
from .config import ExperimentConfig
from .data import load_mnist_idx, sample_noise, sample_real
from .errors import NonFiniteError
from .lipschitz import GpConfig
from .optim import RmsPropState, rmsprop_step

log = logging.getLogger(__name__)

SWEEP_HEADER = ["loss", "alpha", "k_sn", "seed", "frechet", "coverage", "hq_fraction", "status"]


@dataclass
class RunArtifacts:
    config: dict
    d_params: nn.ParamStore
    g_params: nn.ParamStore
    trace: mx.DomainTrace
    metrics: list = field(default_factory=list)
    samples: np.ndarray = None
    real_samples: np.ndarray = None
    status: str = "ok"
    failure: str = None
    failed_iteration: int = None
    bound_violations: int = 0
    psi_violations: int = 0
    wall_clock: float = 0.0

    @property
    def final_metrics(self):
        return self.metrics[-1] if self.metrics else {}

    def same_as(self, other):
        """Equality of everything except wall-clock time."""
        if self.status != other.status or self.failed_iteration != other.failed_iteration:
            return False
        if not (self.d_params.equals(other.d_params) and self.g_params.equals(other.g_params)):
            return False
        if json.dumps(self.trace.records) != json.dumps(other.trace.records):
            return False
        return json.dumps(self.metrics) == json.dumps(other.metrics)

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(self.config, indent=2) + "\n")
        self.trace.to_jsonl(out / "trace.jsonl")
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "frechet", "coverage", "hq_fraction"])
            for m in self.metrics:
                w.writerow([m["iter"], m["frechet"], m["coverage"], m["hq_fraction"]])
        cfg = ExperimentConfig.from_dict(self.config)
        last = len(self.trace)
        nn.save_checkpoint(out / "disc.ckpt", self.d_params, cfg.disc, cfg.seed, last)
        nn.save_checkpoint(out / "gen.ckpt", self.g_params, cfg.gen, cfg.seed, last)
        if self.samples is not None:
            np.savetxt(out / "samples.csv", self.samples, delimiter=",", header="x,y", comments="")
        if self.real_samples is not None:
            np.savetxt(out / "real_samples.csv", self.real_samples, delimiter=",", header="x,y", comments="")
        summary = {
            "status": self.status,
            "failure": self.failure,
            "failed_iteration": self.failed_iteration,
            "iterations_run": last,
            "bound_violations": self.bound_violations,
            "psi_violations": self.psi_violations,
            "omega_union": self.trace.omega_union,
            "final": self.final_metrics,
            "wall_clock": self.wall_clock,
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        return out


class _Run:
    """Mutable state of one training run."""

    def __init__(self, cfg):
        self.cfg = cfg
        seeds = np.random.SeedSequence(cfg.seed).spawn(7)
        (self.r_init_d, self.r_init_g, self.r_sn, self.r_data,
         self.r_noise, self.r_gp, self.r_eval) = (np.random.default_rng(s) for s in seeds)
        self.D = nn.init_params(cfg.disc, self.r_init_d)
        self.G = nn.init_params(cfg.gen, self.r_init_g)
        reg = cfg.regularizer
        self.sn = reg.kind == "sn"
        self.gp = GpConfig(reg.lam, reg.k_gp) if reg.kind == "gp" else None
        self.states = lip.init_sn_states(self.D, reg.k_sn, reg.power_iters, self.r_sn) if self.sn else None
        self.opt_d = RmsPropState(cfg.optim.lr, cfg.optim.rho, cfg.optim.eps)
        self.opt_g = RmsPropState(cfg.optim.lr, cfg.optim.rho, cfg.optim.eps)
        if cfg.data.is_toy:
            self.toy = cfg.data.toy()
            self.images = None
            self.input_shape = (2,)
        else:
            self.toy = None
            self.images = load_mnist_idx(cfg.data.path, cfg.data.labels_path)
            self.input_shape = self.images.dims
        self.value_range = tuple(cfg.data.value_range)

    def real_batch(self, n, rng):
        if self.toy is not None:
            return sample_real(self.toy, n, rng)
        return self.images.sample(n, rng)

    def generate(self, n, rng):
        z = sample_noise(self.cfg.latent_dim, n, rng)
        return nn.forward(self.G, self.cfg.gen, z).value

    def d_weights(self, params, update):
        if self.sn:
            return lip.spectral_normalize(params, self.states, update=update)
        return params.weights


def d_step(run, it, loss_fn=None):
    """One discriminator update.

    Returns the scores, loss value and the effective weights used. The new
    parameters are stored on ``run``. ``loss_fn(f_real, f_fake)`` overrides
    the configured loss (used to compare against a linearized loss).
    """
    cfg = run.cfg
    b = cfg.batch
    x_real = run.real_batch(b, run.r_data)
    x_fake = run.generate(b, run.r_noise)
    with ad.Tape() as tape:
        P = run.D.watch(tape)
        ws = run.d_weights(P, update=True)
        s = nn.scores(P, cfg.disc, ad.concat([x_real, x_fake]), ws)
        f_real, f_fake = ad.rows(s, 0, b), ad.rows(s, b, 2 * b)
        loss = (loss_fn or (lambda r, f: losses.disc_loss(cfg.loss, r, f)))(f_real, f_fake)
        total = loss
        if run.gp is not None:
            D = lambda x: nn.scores(P, cfg.disc, x, ws)
            total = loss + lip.gradient_penalty(D, x_real, x_fake, run.gp, run.r_gp)
        total_value = total.item()
        if not math.isfinite(total_value):
            raise NonFiniteError(f"non-finite discriminator loss at iteration {it}", it)
        grads = ad.backward(total, P.tensors())
    new = rmsprop_step(run.D.tensors(), grads, run.opt_d, it)
    run.D = nn.ParamStore.from_tensors(new)
    return {
        "real": f_real.value,
        "fake": f_fake.value,
        "loss": total_value,
        "weights": [w.value for w in ws],
    }


def g_step(run, it):
    cfg = run.cfg
    z = sample_noise(cfg.latent_dim, cfg.batch, run.r_noise)
    with ad.Tape() as tape:
        P = run.G.watch(tape)
        x = nn.forward(P, cfg.gen, z)
        ws = run.d_weights(run.D, update=False)
        s = nn.scores(run.D, cfg.disc, x, ws)
        loss = losses.gen_loss(cfg.loss, s)
        value = loss.item()
        if not math.isfinite(value):
            raise NonFiniteError(f"non-finite generator loss at iteration {it}", it)
        grads = ad.backward(loss, P.tensors())
    run.G = nn.ParamStore.from_tensors(rmsprop_step(run.G.tensors(), grads, run.opt_g, it))
    return value


def evaluate(run, it):
    cfg = run.cfg
    n = cfg.eval_samples
    fake = run.generate(n, run.r_eval)
    real = run.real_batch(n, run.r_eval)
    rec = {"iter": it, "frechet": mx.frechet_gaussian(fake, real), "coverage": math.nan, "hq_fraction": math.nan}
    if run.toy is not None:
        radius = cfg.coverage_radius or 3.0 * run.toy.std
        cov, hq = mx.mode_coverage(fake, run.toy.centers(), radius)
        rec["coverage"], rec["hq_fraction"] = cov, hq
    return rec, fake, real


def _interval_record(cfg, it, d, loss_g):
    spec = cfg.loss
    om_r = mx.record_interval(d["real"])
    om_f = mx.record_interval(d["fake"])
    return {
        "iter": it,
        "omega": mx.hull(om_r, om_f),
        "omega_real": om_r,
        "omega_fake": om_f,
        "psi": mx.attained_gradient_interval(spec, "real", d["real"]),
        "psi_fake": mx.attained_gradient_interval(spec, "fake", d["fake"]),
        "loss_d": d["loss"],
        "loss_g": loss_g,
    }


def _psi_violation(spec, rec):
    """Mean-value check: spread of real-term slopes <= M * width of the real scores."""
    lo, hi = rec["omega_real"]
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return False
    M = losses.second_derivative_max(spec, (lo, hi), "real")
    limit = M * (hi - lo)
    spread = rec["psi"][1] - rec["psi"][0]
    return spread > limit + 1e-9 + 1e-12 * abs(limit)


def train(cfg, out_dir=None, progress=False):
    """Train one GAN; never raises on numerical blow-up (see ``status``)."""
    t0 = time.perf_counter()
    run = _Run(cfg)
    trace = mx.DomainTrace()
    art = RunArtifacts(cfg.to_dict(), run.D, run.G, trace)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for it in range(cfg.iterations):
            try:
                for _ in range(cfg.n_dis):
                    d = d_step(run, it)
                loss_g = g_step(run, it)
            except NonFiniteError as exc:
                art.status, art.failure, art.failed_iteration = "failed", str(exc), it
                log.info("run halted: %s", exc)
                break
            rec = _interval_record(cfg, it, d, loss_g)
            if run.sn and cfg.check_bounds:
                k_hat = lip.lipschitz_upper_bound(d["weights"])
                bound = lip.domain_bound(k_hat, run.input_shape, run.value_range)
                rec["k_hat"] = k_hat
                rec["omega_bound"] = bound
                if rec["omega"][1] - rec["omega"][0] > bound + 1e-6:
                    art.bound_violations += 1
            if _psi_violation(cfg.loss, rec):
                art.psi_violations += 1
            trace.append(rec)
            if (it + 1) % cfg.eval_every == 0 or it + 1 == cfg.iterations:
                m, fake, real = evaluate(run, it + 1)
                art.metrics.append(m)
                art.samples, art.real_samples = fake, real
                if progress:
                    log.info("iter %d frechet %.4f coverage %s hq %.3f", it + 1, m["frechet"], m["coverage"], m["hq_fraction"])
    if art.status == "failed":
        art.metrics.append({"iter": len(trace), "frechet": math.nan, "coverage": 0, "hq_fraction": 0.0})
    art.d_params, art.g_params = run.D, run.G
    art.wall_clock = time.perf_counter() - t0
    if out_dir is not None:
        art.save(out_dir)
    return art


def linearized_loss(spec):
    """Disc loss with each term replaced by its tangent at 0."""
    cr = losses.degenerate_limit_grad(spec, "real")
    cf = losses.degenerate_limit_grad(spec, "fake")
    return lambda r, f: ad.as_tensor(r).mean() * cr + ad.as_tensor(f).mean() * cf


def first_d_update(cfg, linearized=False):
    """Parameter change of the very first discriminator step (flat vector)."""
    run = _Run(cfg)
    before = run.D.flat()
    d_step(run, 0, linearized_loss(cfg.loss) if linearized else None)
    return run.D.flat() - before


def first_d_gradient(cfg, linearized=False):
    """Raw discriminator-loss gradient at initialization (flat vector)."""
    run = _Run(cfg)
    b = cfg.batch
    x_real = run.real_batch(b, run.r_data)
    x_fake = run.generate(b, run.r_noise)
    loss_fn = linearized_loss(cfg.loss) if linearized else (lambda r, f: losses.disc_loss(cfg.loss, r, f))
    with ad.Tape() as tape:
        P = run.D.watch(tape)
        ws = run.d_weights(P, update=True)
        s = nn.scores(P, cfg.disc, ad.concat([x_real, x_fake]), ws)
        loss = loss_fn(ad.rows(s, 0, b), ad.rows(s, b, 2 * b))
        grads = ad.backward(loss, P.tensors())
    return np.concatenate([g.value.ravel() for g in grads])


# ---------------------------------------------------------------------------
# sweeps


def _cell_config(base, loss, alpha, k_sn, seed):
    return base.replace(**{"loss.kind": loss, "loss.alpha": alpha, "regularizer.k_sn": k_sn, "seed": seed})


def _run_cell(args):
    cfg_dict, key = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    try:
        art = train(cfg)
    except Exception as exc:  # a broken cell must not stop the sweep
        return key, {"frechet": math.nan, "coverage": math.nan, "hq_fraction": math.nan,
                     "status": f"error: {exc}"}
    m = art.final_metrics
    return key, {"frechet": m.get("frechet", math.nan), "coverage": m.get("coverage", math.nan),
                 "hq_fraction": m.get("hq_fraction", math.nan), "status": art.status}


def _workers(requested, n):
    cap = os.environ.get("LIPGAN_THREADS")
    w = requested or (int(cap) if cap else (os.cpu_count() or 1))
    if cap:
        w = min(w, int(cap))
    return max(1, min(w, n))


def sweep(base, k_sn=None, alpha=None, loss=None, seeds=None, workers=None, csv_path=None):
    """Run the grid k_sn x alpha x loss x seeds; one row per run plus a median row per cell.

    Each run is seeded by its own seed only, so results do not depend on
    grid order or parallel scheduling.
    """
    k_sn = list(k_sn or [base.regularizer.k_sn])
    alpha = list(alpha or [base.loss.alpha])
    loss = list(loss or [base.loss.kind])
    seeds = list(seeds or [base.seed])
    jobs = []
    for kind in loss:
        for a in alpha:
            for k in k_sn:
                for s in seeds:
                    jobs.append((_cell_config(base, kind, a, k, s).to_dict(), (kind, a, k, s)))
    n = _workers(workers, len(jobs))
    if n == 1:
        results = dict(_run_cell(j) for j in jobs)
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = dict(pool.map(_run_cell, jobs))
    rows = []
    for kind in loss:
        for a in alpha:
            for k in k_sn:
                cell = []
                for s in seeds:
                    r = results[(kind, a, k, s)]
                    row = {"loss": kind, "alpha": a, "k_sn": k, "seed": s, **r}
                    rows.append(row)
                    cell.append(row)
                if len(seeds) > 1:
                    rows.append(_median_row(kind, a, k, cell))
    if csv_path is not None:
        write_sweep_csv(rows, csv_path)
    return rows


def _median(values, worst):
    vals = [worst if (v is None or (isinstance(v, float) and math.isnan(v))) else v for v in values]
    return statistics.median(vals)


def _median_row(kind, a, k, cell):
    ok = sum(r["status"] == "ok" for r in cell)
    return {
        "loss": kind, "alpha": a, "k_sn": k, "seed": "median",
        "frechet": _median([r["frechet"] for r in cell], math.inf),
        "coverage": _median([r["coverage"] for r in cell], 0),
        "hq_fraction": _median([r["hq_fraction"] for r in cell], 0.0),
        "status": f"{ok}/{len(cell)} ok",
    }


def write_sweep_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_HEADER)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in SWEEP_HEADER})


def read_sweep_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cell_metric(rows, loss, alpha, k_sn, key="frechet"):
    """Median value of ``key`` for one cell (failed runs count as worst)."""
    worst = math.inf if key == "frechet" else 0.0
    vals = [r[key] for r in rows if r["seed"] != "median" and r["loss"] == loss
            and r["alpha"] == alpha and r["k_sn"] == k_sn]
    return _median(vals, worst)
