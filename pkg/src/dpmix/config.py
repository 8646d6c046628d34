"""TOML experiment configuration loading."""

from __future__ import annotations

from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .experiments import ExperimentConfig, FitPlan, PriorConfig, TrueDensitySpec

__all__ = ["load_config", "prior_from_config", "experiment_from_config"]


def load_config(path) -> dict:
    with open(Path(path), "rb") as fh:
        return tomllib.load(fh)


def prior_from_config(raw: dict) -> PriorConfig:
    block = raw.get("prior", {})
    return PriorConfig(
        alpha_mass=float(block.get("alpha_mass", 1.0)),
        base_tau=float(block.get("base_tau", 2.0)),
        gamma_shape=float(block.get("gamma_shape", 2.0)),
        gamma_rate=float(block.get("gamma_rate", 1.0)),
        dim=int(block.get("dim", 1)),
    )


def _plan_from_config(raw: dict) -> FitPlan:
    block = raw.get("fit", {})
    return FitPlan(
        truncation=int(block.get("truncation", 40)),
        thin=int(block.get("thin", 20)),
        sigma_step=float(block.get("sigma_step", 0.4)),
        iters_base=int(block.get("iters_base", 2000)),
        iters_per_obs=float(block.get("iters_per_obs", 2.0)),
    )


def experiment_from_config(
    raw: dict, seed: int | None = None, threads: int | None = None
) -> tuple[TrueDensitySpec, ExperimentConfig]:
    exp = raw.get("experiment", {})
    prior = prior_from_config(raw)
    spec = TrueDensitySpec(
        kind=exp.get("kind", "supersmooth"),
        dim=prior.dim,
        sigma0=float(exp.get("sigma0", 0.5)),
        scale=float(exp.get("scale", 1.0)),
    )
    cfg = ExperimentConfig(
        prior=prior,
        plan=_plan_from_config(raw),
        n_grid=tuple(int(n) for n in exp.get("n_grid", (100, 316, 1000, 3162))),
        replications=int(exp.get("replications", 8)),
        seed=int(exp.get("seed", 0)) if seed is None else int(seed),
        threads=int(exp.get("threads", 1)) if threads is None else int(threads),
    )
    return spec, cfg
