"""End-to-end contraction experiments: true densities, rate runs, reports.

A rate run samples data from a known truth, fits the mixture posterior
for each n in a grid, measures Hellinger errors against the truth, and
regresses log error on log n.  Reports are deterministic CSV files plus
a hand-written SVG log-log plot (one polyline per series).
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import metrics
from .approx import CompactDensity
from .density import DiscreteMeasure, MixtureDensity
from .inference import FitConfig, SamplerDivergence, fit, posterior_predictive
from .prior import BandwidthPrior, DPPrior, GaussianBaseMeasure

__all__ = [
    "TrueDensitySpec",
    "TrueDensity",
    "PriorConfig",
    "FitPlan",
    "ExperimentConfig",
    "RateRecord",
    "RateRunResult",
    "make_true_density",
    "triweight_density",
    "triangular_density",
    "run_rate_experiment",
    "emit_report",
]

TRIWEIGHT_NORM = 35.0 / 32.0  # 1 / integral of (1 - x^2)^3 over [-1, 1]


@dataclass(frozen=True)
class TrueDensitySpec:
    kind: str  # "supersmooth" | "ordinarysmooth"
    dim: int = 1
    # supersmooth parameters
    atoms: tuple = ((-1.0,), (1.0,))
    weights: tuple = (0.5, 0.5)
    sigma0: float = 0.5
    # ordinarysmooth parameter (support scale)
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("supersmooth", "ordinarysmooth"):
            raise ValueError(f"unknown truth kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")


@dataclass(frozen=True)
class TrueDensity:
    """Evaluable and sampleable ground truth."""

    density: object  # pdf / support_box / dim provider
    spec: TrueDensitySpec
    _sampler: object = field(repr=False, default=None)

    @property
    def dim(self) -> int:
        return self.density.dim

    def pdf(self, x):
        return self.density.pdf(x)

    def support_box(self):
        return self.density.support_box()

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self._sampler is not None:
            return self._sampler(n, rng)
        return self.density.sample(n, rng)


def _triweight_1d(x: np.ndarray, scale: float) -> np.ndarray:
    t = x / scale
    inside = np.abs(t) <= 1.0
    out = np.zeros_like(t)
    out[inside] = TRIWEIGHT_NORM / scale * (1.0 - t[inside] ** 2) ** 3
    return out


def _sample_triweight_axis(n: int, rng: np.random.Generator, scale: float) -> np.ndarray:
    """Rejection from the uniform envelope on [-1, 1] (acceptance 16/35)."""
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = max(64, int((n - filled) * 2.4))
        u = rng.uniform(-1.0, 1.0, size=m)
        accept = rng.random(m) <= (1.0 - u**2) ** 3
        got = u[accept][: n - filled]
        out[filled : filled + len(got)] = got
        filled += len(got)
    return out * scale


def triweight_density(dim: int = 1, scale: float = 1.0) -> CompactDensity:
    """Product of per-axis triweight densities (35/32)(1-x^2)^3 on [-1, 1],
    twice continuously differentiable everywhere (including the boundary)."""

    def pdf(x: np.ndarray) -> np.ndarray:
        vals = np.ones(x.shape[0])
        for i in range(dim):
            vals *= _triweight_1d(x[:, i], scale)
        return vals

    grad = hess = None
    if dim == 1:

        def grad(x: np.ndarray) -> np.ndarray:
            t = np.atleast_2d(x)[:, 0] / scale
            g = np.zeros_like(t)
            inside = np.abs(t) <= 1.0
            g[inside] = (
                -6.0 * TRIWEIGHT_NORM / scale**2 * t[inside] * (1 - t[inside] ** 2) ** 2
            )
            return g[:, None]

        def hess(x: np.ndarray) -> np.ndarray:
            t = np.atleast_2d(x)[:, 0] / scale
            h = np.zeros_like(t)
            inside = np.abs(t) <= 1.0
            ti = t[inside]
            h[inside] = (
                -6.0 * TRIWEIGHT_NORM / scale**3 * (1 - ti**2) * (1 - 5 * ti**2)
            )
            return h[:, None, None]

    return CompactDensity.from_callable(
        pdf, [-scale] * dim, [scale] * dim, grad=grad, hess=hess
    )


def triangular_density(scale: float = 1.0) -> CompactDensity:
    """Tent density (1 - |x|)/scale on [-scale, scale]: continuous but with
    a kink at 0, the control case for the smoothing-rate audit."""

    def pdf(x: np.ndarray) -> np.ndarray:
        t = x[:, 0] / scale
        inside = np.abs(t) <= 1.0
        out = np.zeros_like(t)
        out[inside] = (1.0 - np.abs(t[inside])) / scale
        return out

    return CompactDensity.from_callable(pdf, [-scale], [scale])


def make_true_density(spec: TrueDensitySpec) -> TrueDensity:
    """Default truths: a two-atom Gaussian mixture (super-smooth) or a
    product triweight (ordinary-smooth)."""
    if spec.kind == "supersmooth":
        atoms = np.atleast_2d(np.asarray(spec.atoms, dtype=float))
        if atoms.shape[1] != spec.dim:
            if atoms.shape[1] == 1:
                atoms = np.repeat(atoms, spec.dim, axis=1)
            else:
                raise ValueError("atom dim does not match spec dim")
        mix = MixtureDensity(
            DiscreteMeasure(atoms, np.asarray(spec.weights, dtype=float)), spec.sigma0
        )
        return TrueDensity(density=mix, spec=spec)

    compact = triweight_density(spec.dim, spec.scale)

    def sampler(n: int, rng: np.random.Generator) -> np.ndarray:
        cols = [_sample_triweight_axis(n, rng, spec.scale) for _ in range(spec.dim)]
        return np.stack(cols, axis=1)

    return TrueDensity(density=compact, spec=spec, _sampler=sampler)


# ---------------------------------------------------------------------------
# Experiment configuration and execution.


@dataclass(frozen=True)
class PriorConfig:
    alpha_mass: float = 1.0
    base_tau: float = 2.0
    gamma_shape: float = 2.0
    gamma_rate: float = 1.0
    dim: int = 1

    def build(self) -> DPPrior:
        return DPPrior(
            GaussianBaseMeasure(self.alpha_mass, self.base_tau, self.dim),
            BandwidthPrior(self.gamma_shape, self.gamma_rate, self.dim),
        )


@dataclass(frozen=True)
class FitPlan:
    """Per-n MCMC budget: iterations = iters_base + iters_per_obs * n."""

    truncation: int = 40
    thin: int = 20
    sigma_step: float = 0.4
    iters_base: int = 2000
    iters_per_obs: float = 2.0

    def config_for(self, n: int, seed: int) -> FitConfig:
        iters = int(self.iters_base + self.iters_per_obs * n)
        return FitConfig(
            truncation=self.truncation,
            iterations=iters,
            burn_in=iters // 2,
            thin=self.thin,
            sigma_step=self.sigma_step,
            seed=seed,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    prior: PriorConfig = PriorConfig()
    plan: FitPlan = FitPlan()
    n_grid: tuple = (100, 316, 1000, 3162)
    replications: int = 8
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if len(self.n_grid) < 4:
            raise ValueError("n_grid needs at least 4 points for slope fitting")
        if list(self.n_grid) != sorted(set(self.n_grid)):
            raise ValueError("n_grid must be strictly increasing")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")


@dataclass(frozen=True)
class RateRecord:
    n: int
    rep: int
    hellinger: float  # h(truth, posterior-mean density)
    post_mean_hellinger: float  # mean over draws of h(truth, draw)
    se: float  # MC s.e. of the posterior-mean Hellinger
    runtime_s: float
    failed: bool = False


@dataclass(frozen=True)
class RateRunResult:
    records: list[RateRecord]
    slope: float
    ci_lo: float
    ci_hi: float
    target_exponent: float
    n_failed: int


def _target_exponent(spec: TrueDensitySpec) -> float:
    if spec.kind == "supersmooth":
        return -0.5
    return -2.0 / (4.0 + spec.dim)


def _run_one(args):
    spec, prior_cfg, plan, n, rep, data_seed, fit_seed = args
    truth = make_true_density(spec)
    prior = prior_cfg.build()
    rng = np.random.default_rng(data_seed)
    data = truth.sample(n, rng)
    t0 = time.perf_counter()
    try:
        samples = fit(data, prior, plan.config_for(n, fit_seed))
    except SamplerDivergence:
        return RateRecord(n, rep, math.nan, math.nan, math.nan,
                          time.perf_counter() - t0, failed=True)
    # quadrature domain must cover every retained draw, not just one
    boxes = [truth.support_box()] + [d.support_box() for d in samples.draws]
    lo = np.min(np.stack([b[0] for b in boxes]), axis=0)
    hi = np.max(np.stack([b[1] for b in boxes]), axis=0)
    scheme = metrics.QuadratureScheme(
        "grid", metrics.DEFAULT_GRID_POINTS[truth.dim], lo, hi
    )
    pts, _ = scheme.nodes()
    predictive = posterior_predictive(samples, pts)
    h_pred = metrics.hellinger(truth, predictive, scheme)
    h_draws = np.array([metrics.hellinger(truth, d, scheme) for d in samples.draws])
    return RateRecord(
        n=n,
        rep=rep,
        hellinger=h_pred,
        post_mean_hellinger=float(np.mean(h_draws)),
        se=float(np.std(h_draws, ddof=1) / math.sqrt(len(h_draws))),
        runtime_s=time.perf_counter() - t0,
    )


def run_rate_experiment(spec: TrueDensitySpec, cfg: ExperimentConfig) -> RateRunResult:
    """Fit the posterior across the n grid and regress log error on log n."""
    jobs = []
    ss = np.random.SeedSequence(cfg.seed)
    children = ss.spawn(len(cfg.n_grid) * cfg.replications)
    i = 0
    for n in cfg.n_grid:
        for rep in range(cfg.replications):
            s_data, s_fit = (int(v) for v in children[i].generate_state(2))
            jobs.append((spec, cfg.prior, cfg.plan, int(n), rep, s_data, s_fit))
            i += 1
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            records = list(pool.map(_run_one, jobs))
    else:
        records = [_run_one(j) for j in jobs]
    records.sort(key=lambda r: (r.n, r.rep))

    ok = [r for r in records if not r.failed]
    n_failed = len(records) - len(ok)
    by_n: dict[int, list[float]] = {}
    for r in ok:
        by_n.setdefault(r.n, []).append(r.hellinger)
    ns = sorted(by_n)
    if len(ns) < 2:
        raise ValueError("not enough successful grid points to fit a slope")
    log_n = np.log([float(n) for n in ns])
    log_err = np.log([float(np.mean(by_n[n])) for n in ns])
    res = stats.linregress(log_n, log_err)
    dof = max(1, len(ns) - 2)
    t_crit = stats.t.ppf(0.975, dof)
    return RateRunResult(
        records=records,
        slope=float(res.slope),
        ci_lo=float(res.slope - t_crit * res.stderr),
        ci_hi=float(res.slope + t_crit * res.stderr),
        target_exponent=_target_exponent(spec),
        n_failed=n_failed,
    )


# ---------------------------------------------------------------------------
# Report emission: CSV + SVG.


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _svg_polyline(xy: list[tuple[float, float]], color: str, width: float,
                  dash: str | None = None) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in xy)
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="{width}"'
        f'{dash_attr} points="{pts}" />'
    )


def _svg_loglog_plot(
    path: Path,
    points: list[tuple[float, float]],
    fit_slope: float,
    fit_intercept: float,
    guide_slope: float,
) -> None:
    """Minimal SVG: data polyline, fitted line, and a target-slope guide."""
    W, H, PAD = 480, 360, 48
    xs = np.log10([p[0] for p in points])
    ys = np.log10([max(p[1], 1e-12) for p in points])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()) - 0.2, float(ys.max()) + 0.2

    def sx(x):
        return PAD + (x - x0) / (x1 - x0) * (W - 2 * PAD)

    def sy(y):
        return H - PAD - (y - y0) / (y1 - y0) * (H - 2 * PAD)

    def line_from(slope_nat, intercept_nat):
        # y = slope * ln(n) + intercept in natural logs -> log10 space
        out = []
        for lx in (x0, x1):
            ln_n = lx * math.log(10.0)
            ln_y = slope_nat * ln_n + intercept_nat
            out.append((sx(lx), sy(ln_y / math.log(10.0))))
        return out

    data_xy = [(sx(x), sy(y)) for x, y in zip(xs, ys)]
    # guide through the first data point with the target slope
    guide_intercept = ys[0] * math.log(10.0) - guide_slope * xs[0] * math.log(10.0)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white" />',
        _svg_polyline(
            [(PAD, H - PAD), (W - PAD, H - PAD)], "#222222", 1.0
        ),
        _svg_polyline([(PAD, PAD), (PAD, H - PAD)], "#222222", 1.0),
        _svg_polyline(data_xy, "#1f77b4", 2.0),
        _svg_polyline(line_from(fit_slope, fit_intercept), "#d62728", 1.5),
        _svg_polyline(line_from(guide_slope, guide_intercept), "#2ca02c", 1.5, dash="6,4"),
        "</svg>",
    ]
    path.write_text("\n".join(parts) + "\n")


def emit_report(result: RateRunResult, out_dir, stem: str = "rates",
                include_runtime: bool = True) -> dict[str, Path]:
    """Write the per-replication CSV, the summary CSV and the SVG plot.

    With include_runtime=False the runtime column is zeroed, which makes
    the files byte-reproducible under a fixed seed.
    """
    if not result.records:
        raise ValueError("empty result; nothing to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    detail = out_dir / f"{stem}_detail.csv"
    rows = [
        [
            r.n,
            r.rep,
            r.hellinger,
            r.se,
            (r.runtime_s if include_runtime else 0.0),
        ]
        for r in result.records
    ]
    _write_csv(detail, ["n", "rep", "hellinger", "se", "runtime_s"], rows)

    summary = out_dir / f"{stem}_summary.csv"
    _write_csv(
        summary,
        ["slope", "ci_lo", "ci_hi", "target", "n_failed"],
        [[result.slope, result.ci_lo, result.ci_hi, result.target_exponent,
          result.n_failed]],
    )

    plot = out_dir / f"{stem}_plot.svg"
    ok = [r for r in result.records if not r.failed]
    by_n: dict[int, list[float]] = {}
    for r in ok:
        by_n.setdefault(r.n, []).append(r.hellinger)
    pts = [(float(n), float(np.mean(v))) for n, v in sorted(by_n.items())]
    log_n = np.log([p[0] for p in pts])
    log_e = np.log([p[1] for p in pts])
    intercept = float(np.mean(log_e) - result.slope * np.mean(log_n))
    _svg_loglog_plot(plot, pts, result.slope, intercept, result.target_exponent)
    return {"detail": detail, "summary": summary, "plot": plot}
