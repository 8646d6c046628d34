"""`dpmix` command line: prior simulation, posterior fits, rate runs,
and the sieve / approximation audits.

Exit codes: 0 success, 2 usage error, 3 invariant or certification
failure.  All subcommands are deterministic given --seed (the rates
runtime column is zeroed unless --timing is passed).
"""

from __future__ import annotations

import functools
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import approx, sieve
from .config import experiment_from_config, load_config, prior_from_config
from .density import write_mixtures
from .errors import DpmixError
from .experiments import (
    PriorConfig,
    emit_report,
    run_rate_experiment,
    triweight_density,
)
from .inference import FitConfig, fit as run_fit
from .prior import draw_prior_density

EXIT_FAILURE = 3


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValueError as exc:
            raise click.UsageError(str(exc)) from exc
        except DpmixError as exc:
            click.echo(f"failure: {exc}", err=True)
            sys.exit(EXIT_FAILURE)

    return wrapper


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="TOML config file with [prior]/[fit]/[experiment] blocks.")
@click.option("--seed", type=int, default=None, help="Master seed override.")
@click.option("--threads", type=int, default=None, help="Worker process count.")
@click.option("--out-dir", type=click.Path(), default=".", show_default=True,
              help="Directory for output files.")
@click.pass_context
def main(ctx, config_path, seed, threads, out_dir):
    """Dirichlet-process Gaussian mixture toolkit."""
    ctx.ensure_object(dict)
    ctx.obj["config"] = load_config(config_path) if config_path else {}
    ctx.obj["seed"] = seed
    ctx.obj["threads"] = threads
    ctx.obj["out_dir"] = Path(out_dir)


@main.command("prior-sim")
@click.option("--n-draws", type=int, default=100, show_default=True)
@click.option("--tail-tol", type=float, default=1e-3, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=str, default="prior_draws.csv", show_default=True)
@click.pass_context
@_guarded
def prior_sim(ctx, n_draws, tail_tol, seed, out):
    """Draw truncated densities from the prior and summarize them."""
    seed = seed if seed is not None else (ctx.obj["seed"] or 0)
    prior = prior_from_config(ctx.obj["config"]).build()
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_draws):
        mix = draw_prior_density(prior, tail_tol, rng)
        rows.append(
            [i, mix.sigma, mix.mixing.n_atoms, mix.mixing.deficit,
             float(mix.mixing.weights.max())]
        )
    _write_csv(ctx.obj["out_dir"] / out,
               ["draw", "sigma", "n_atoms", "deficit", "max_weight"], rows)
    click.echo(f"wrote {n_draws} prior draws to {ctx.obj['out_dir'] / out}")


@main.command("fit")
@click.option("--data", "data_path", type=click.Path(exists=True), required=True,
              help="CSV with one observation per row, d columns.")
@click.option("--iters", type=int, default=2000, show_default=True)
@click.option("--burnin", type=int, default=1000, show_default=True)
@click.option("--thin", type=int, default=5, show_default=True)
@click.option("--trunc", type=int, default=40, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=str, default="samples.txt", show_default=True)
@click.pass_context
@_guarded
def fit_cmd(ctx, data_path, iters, burnin, thin, trunc, seed, out):
    """Fit the posterior by blocked Gibbs; write retained density draws."""
    seed = seed if seed is not None else (ctx.obj["seed"] or 0)
    data = np.loadtxt(data_path, delimiter=",", ndmin=2)
    prior_cfg = prior_from_config(ctx.obj["config"])
    if prior_cfg.dim != data.shape[1]:
        prior_cfg = PriorConfig(
            alpha_mass=prior_cfg.alpha_mass, base_tau=prior_cfg.base_tau,
            gamma_shape=prior_cfg.gamma_shape, gamma_rate=prior_cfg.gamma_rate,
            dim=data.shape[1],
        )
    cfg = FitConfig(truncation=trunc, iterations=iters, burn_in=burnin,
                    thin=thin, seed=seed)
    samples = run_fit(data, prior_cfg.build(), cfg)
    out_path = ctx.obj["out_dir"] / out
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_mixtures(samples.draws, out_path)
    click.echo(
        f"retained {len(samples.draws)} draws "
        f"(sigma acceptance {samples.acceptance_rate:.2f}) -> {out_path}"
    )


@main.command("rates")
@click.option("--timing/--no-timing", default=False, show_default=True,
              help="Record wall-clock runtimes (breaks byte reproducibility).")
@click.pass_context
@_guarded
def rates_cmd(ctx, timing):
    """Run the posterior-contraction rate experiment from the config file."""
    spec, cfg = experiment_from_config(
        ctx.obj["config"], seed=ctx.obj["seed"], threads=ctx.obj["threads"]
    )
    result = run_rate_experiment(spec, cfg)
    paths = emit_report(result, ctx.obj["out_dir"], stem=f"rates_{spec.kind}",
                        include_runtime=timing)
    click.echo(
        f"{spec.kind}: slope {result.slope:.3f} "
        f"[{result.ci_lo:.3f}, {result.ci_hi:.3f}] "
        f"target {result.target_exponent:.3f}; reports in {ctx.obj['out_dir']}"
    )
    for name, p in paths.items():
        click.echo(f"  {name}: {p}")


@main.command("sieve-audit")
@click.option("--n", type=int, required=True, help="Sample-size parameter of the schedule.")
@click.option("--dim", type=int, default=1, show_default=True)
@click.option("--regime", type=click.Choice(["supersmooth", "holder"]),
              default="supersmooth", show_default=True)
@click.option("--s", "s_param", type=float, default=0.5, show_default=True)
@click.option("--beta", type=float, default=None, help="Holder exponent in (0, 1/2).")
@click.option("--q", type=float, default=None, help="Holder log power.")
@click.option("--nsim", type=int, default=10000, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=str, default="sieve_audit.csv", show_default=True)
@click.pass_context
@_guarded
def sieve_audit(ctx, n, dim, regime, s_param, beta, q, nsim, seed, out):
    """Build a rate schedule, compute its bound terms, and MC-check the
    prior mass escaping the sieve."""
    seed = seed if seed is not None else (ctx.obj["seed"] or 0)
    if regime == "supersmooth":
        spec, eps_tilde, eps_bar = sieve.schedule_supersmooth(n, s_param, dim)
    else:
        if beta is None or q is None:
            beta, q = sieve.ordinary_smooth_params(dim)
        spec, eps_tilde, eps_bar = sieve.schedule_holder(n, beta, q, s_param, dim)
    prior = prior_from_config(ctx.obj["config"]).build()
    if prior.dim != dim:
        prior = PriorConfig(dim=dim).build()
    report = sieve.prior_complement_mass(spec, prior, nsim,
                                         np.random.default_rng(seed))
    row = [
        n, dim, regime, spec.eps, spec.box_half_width, spec.sigma_floor,
        spec.sigma_steps, spec.active_atoms, eps_tilde, eps_bar,
        report.box_term, report.sigma_low_term, report.sigma_high_term,
        report.stick_tail_term, report.mc_estimate, report.se,
        sieve.net_log_size(spec), sieve.log_covering_bound(spec),
    ]
    _write_csv(
        ctx.obj["out_dir"] / out,
        ["n", "dim", "regime", "eps", "box_half_width", "sigma_floor",
         "sigma_steps", "active_atoms", "eps_tilde", "eps_bar",
         "box_term", "sigma_low_term", "sigma_high_term", "stick_tail_term",
         "mc_estimate", "se", "exact_net_log_size", "bound_value"],
        [row],
    )
    click.echo(f"sieve audit for n={n} -> {ctx.obj['out_dir'] / out}")


@main.command("approx-audit")
@click.option("--check", "which",
              type=click.Choice(["discretize", "smoothing", "dirichlet",
                                 "perturbation"]),
              required=True)
@click.option("--nsim", type=int, default=200000, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=str, default=None,
              help="Output CSV (defaults to approx_<check>.csv).")
@click.pass_context
@_guarded
def approx_audit(ctx, which, nsim, seed, out):
    """Run one appendix-machinery check over its default parameter sweep."""
    seed = seed if seed is not None else (ctx.obj["seed"] or 0)
    out_path = ctx.obj["out_dir"] / (out or f"approx_{which}.csv")
    rng = np.random.default_rng(seed)

    if which == "discretize":
        p0 = approx.CompactDensity.from_callable(
            lambda x: np.full(x.shape[0], 0.5), [-1.0], [1.0]
        )
        rows = []
        for sig in (0.2, 0.5):
            for eps in (0.1, 0.03, 0.01):
                res = approx.discretize(p0, sig, eps)
                rows.append([sig, eps, res.n_atoms, res.sup_error, res.l1_error,
                             res.budget_unit, res.sup_error / (eps / sig)])
        _write_csv(out_path,
                   ["sigma", "eps", "n_atoms", "sup_error", "l1_error",
                    "budget_unit", "sup_constant"], rows)

    elif which == "smoothing":
        p0 = triweight_density(1)
        sigmas = np.geomspace(0.01, 0.1, 7)
        rep = approx.smoothing_rate_audit(p0, sigmas)
        rows = [[s, h, rep.slope] for s, h in zip(rep.sigmas, rep.hellingers)]
        _write_csv(out_path, ["sigma", "hellinger", "slope"], rows)

    elif which == "dirichlet":
        c_hat, c_off, ests = approx.fit_small_ball_decay(
            (2, 4, 8), 0.1, nsim, rng
        )
        rows = [
            [n, 0.1, e.estimate, e.se, e.n_hits, c_hat]
            for n, e in zip((2, 4, 8), ests)
        ]
        _write_csv(out_path, ["N", "eps", "estimate", "se", "hits", "c_hat"], rows)

    else:  # perturbation
        rows = []
        edges = np.linspace(-1.0, 1.0, 9)
        cells = [approx.BoxCell(np.array([a]), np.array([b]))
                 for a, b in zip(edges[:-1], edges[1:])]
        for trial in range(20):
            atoms = rng.uniform(-1.0, 1.0, size=(12, 1))
            w = rng.dirichlet(np.ones(12))
            from .density import DiscreteMeasure

            F = DiscreteMeasure(atoms, w)
            part = approx.PartitionScheme(
                cells=list(cells), masses=np.zeros(len(cells)),
                targets=np.zeros(len(cells)), dim=1, n_atom_cells=len(cells),
            )
            masses = part.measure_cell_masses(F)
            centers = 0.5 * (edges[:-1] + edges[1:])
            keep = masses > 0
            Fp = DiscreteMeasure(centers[keep][:, None], masses[keep])
            rep = approx.perturbation_bound_check(F, Fp, part, 0.3)
            rows.append([trial, rep.max_diameter, rep.mass_discrepancy,
                         rep.lhs_l1, rep.rhs_l1, rep.ratio_l1])
        _write_csv(out_path,
                   ["trial", "max_diameter", "mass_discrepancy", "lhs_l1",
                    "rhs_l1", "ratio_l1"], rows)

    click.echo(f"approx audit '{which}' -> {out_path}")


if __name__ == "__main__":
    main()
