"""Distances between evaluable densities: L1, Hellinger, KL moments.

Densities are duck-typed: anything exposing ``pdf(points) -> values``,
``support_box() -> (lo, hi)`` and ``dim`` works (mixtures, compact
densities, ad-hoc closures via :class:`DensityFunction`).

All integrals use either a tensor midpoint grid (default; integrands are
smooth and midpoint avoids evaluating compact-support densities on their
boundary) or plain Monte Carlo over the domain box.  Reductions use
numpy's fixed-order pairwise summation, so results are reproducible
regardless of how evaluation is sliced.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "DensityFunction",
    "QuadratureScheme",
    "MetricReport",
    "QuadratureAccuracyWarning",
    "l1_distance",
    "hellinger",
    "kl_div",
    "kl_second",
    "kl_ball_contains",
    "metric_report",
    "sup_ratio",
]

# pdf values below this clamp to zero inside KL integrands (0 log 0 = 0).
KL_PDF_FLOOR = 1e-300
# p above this where q vanishes flags the KL integral as infinite.
KL_INF_THRESHOLD = 1e-12

DEFAULT_GRID_POINTS = {1: 2048, 2: 512, 3: 128}


class QuadratureAccuracyWarning(UserWarning):
    """The integration domain missed a non-negligible share of some mass."""


@dataclass(frozen=True)
class DensityFunction:
    """Ad-hoc evaluable density with a support hint box."""

    fn: Callable[[np.ndarray], np.ndarray]
    lo: np.ndarray
    hi: np.ndarray
    dim: int
    expected_mass: float = 1.0

    @classmethod
    def from_callable(cls, fn, lo, hi, expected_mass=1.0) -> "DensityFunction":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("degenerate support box")
        return cls(fn, lo, hi, dim=len(lo), expected_mass=expected_mass)

    def pdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(self.fn(x), dtype=float)

    def support_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lo, self.hi


@dataclass(frozen=True)
class QuadratureScheme:
    """Tensor midpoint grid or Monte Carlo over a box domain."""

    mode: str  # "grid" | "mc"
    resolution: int  # points per axis (grid) or sample count (mc)
    lo: np.ndarray
    hi: np.ndarray
    mc_seed: int = 0

    def __post_init__(self):
        if self.mode not in ("grid", "mc"):
            raise ValueError(f"unknown quadrature mode {self.mode!r}")
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")
        if np.any(np.asarray(self.hi) <= np.asarray(self.lo)):
            raise ValueError("degenerate quadrature domain")

    @property
    def dim(self) -> int:
        return len(np.atleast_1d(self.lo))

    @classmethod
    def for_pair(cls, p, q, mode: str = "grid", resolution: int | None = None,
                 mc_seed: int = 0) -> "QuadratureScheme":
        """Domain = union of the two support boxes; default resolution by dim."""
        lo_p, hi_p = p.support_box()
        lo_q, hi_q = q.support_box()
        lo = np.minimum(np.atleast_1d(lo_p), np.atleast_1d(lo_q)).astype(float)
        hi = np.maximum(np.atleast_1d(hi_p), np.atleast_1d(hi_q)).astype(float)
        d = len(lo)
        if resolution is None:
            if mode == "grid":
                if d not in DEFAULT_GRID_POINTS:
                    raise ValueError(
                        f"no default grid resolution for dim {d}; pass one explicitly"
                    )
                resolution = DEFAULT_GRID_POINTS[d]
            else:
                resolution = 200_000
        return cls(mode, resolution, lo, hi, mc_seed=mc_seed)

    def nodes(self, resolution: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(points, weights); weights sum to the box volume."""
        res = self.resolution if resolution is None else resolution
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if self.mode == "grid":
            axes = []
            for a, b in zip(lo, hi):
                step = (b - a) / res
                axes.append(a + step * (np.arange(res) + 0.5))
            if len(axes) == 1:
                pts = axes[0][:, None]
            else:
                mesh = np.meshgrid(*axes, indexing="ij")
                pts = np.stack([m.ravel() for m in mesh], axis=1)
            cell = float(np.prod((hi - lo) / res))
            return pts, np.full(pts.shape[0], cell)
        rng = np.random.default_rng(self.mc_seed)
        pts = rng.uniform(lo, hi, size=(res, len(lo)))
        vol = float(np.prod(hi - lo))
        return pts, np.full(res, vol / res)


@dataclass(frozen=True)
class MetricReport:
    """A metric value with its provenance and accuracy bookkeeping."""

    kind: str
    value: float
    error: float  # grid: |fine - coarse|; mc: one standard error
    scheme_mode: str
    scheme_resolution: int
    domain_lo: tuple = field(repr=False, default=())
    domain_hi: tuple = field(repr=False, default=())
    mass_p: float = float("nan")
    mass_q: float = float("nan")
    infinite: bool = False


def _expected_mass(obj) -> float:
    mixing = getattr(obj, "mixing", None)
    if mixing is not None:
        return float(mixing.total_weight)
    return float(getattr(obj, "expected_mass", 1.0))


def _check_dims(p, q):
    if p.dim != q.dim:
        raise ValueError(f"density dims differ: {p.dim} vs {q.dim}")


def _integrand_value(kind: str, pv: np.ndarray, qv: np.ndarray,
                     wts: np.ndarray) -> tuple[float, bool]:
    """Integrate one metric integrand over given node values."""
    if kind == "l1":
        return float(np.sum(np.abs(pv - qv) * wts)), False
    if kind == "hellinger_sq":
        return float(np.sum((np.sqrt(pv) - np.sqrt(qv)) ** 2 * wts)), False
    if kind in ("kl", "kl2"):
        live = pv > KL_PDF_FLOOR
        if np.any(live & (qv <= 0.0) & (pv > KL_INF_THRESHOLD)):
            return math.inf, True
        ok = live & (qv > 0.0)
        log_ratio = np.log(pv[ok]) - np.log(qv[ok])
        if kind == "kl":
            val = np.sum(pv[ok] * log_ratio * wts[ok])
        else:
            val = np.sum(pv[ok] * log_ratio**2 * wts[ok])
        return max(float(val), 0.0), False
    raise ValueError(f"unknown metric kind {kind!r}")


def _evaluate(kind: str, p, q, scheme: QuadratureScheme) -> MetricReport:
    _check_dims(p, q)
    pts, wts = scheme.nodes()
    pv = np.asarray(p.pdf(pts), dtype=float)
    qv = np.asarray(q.pdf(pts), dtype=float)
    value, infinite = _integrand_value(kind, pv, qv, wts)

    mass_p = float(np.sum(pv * wts))
    mass_q = float(np.sum(qv * wts))
    if scheme.mode == "grid":  # MC mass estimates fluctuate at ~1/sqrt(n)
        for name, mass, obj in (("p", mass_p, p), ("q", mass_q, q)):
            if mass < _expected_mass(obj) - 1e-6:
                warnings.warn(
                    f"quadrature domain captures only {mass:.8f} of {name}'s mass",
                    QuadratureAccuracyWarning,
                    stacklevel=3,
                )

    if infinite:
        error = math.inf
    elif scheme.mode == "grid":
        coarse_pts, coarse_wts = scheme.nodes(resolution=max(2, scheme.resolution // 2))
        cv, _ = _integrand_value(
            kind,
            np.asarray(p.pdf(coarse_pts), dtype=float),
            np.asarray(q.pdf(coarse_pts), dtype=float),
            coarse_wts,
        )
        error = abs(value - cv)
    else:
        # recompute pointwise contributions for a standard error
        if kind == "l1":
            contrib = np.abs(pv - qv)
        elif kind == "hellinger_sq":
            contrib = (np.sqrt(pv) - np.sqrt(qv)) ** 2
        else:
            contrib = np.zeros_like(pv)
            ok = (pv > KL_PDF_FLOOR) & (qv > 0.0)
            lr = np.log(pv[ok]) - np.log(qv[ok])
            contrib[ok] = pv[ok] * (lr if kind == "kl" else lr**2)
        vol = float(np.sum(wts))
        error = vol * float(np.std(contrib)) / math.sqrt(len(contrib))

    return MetricReport(
        kind=kind,
        value=value,
        error=error,
        scheme_mode=scheme.mode,
        scheme_resolution=scheme.resolution,
        domain_lo=tuple(np.atleast_1d(scheme.lo)),
        domain_hi=tuple(np.atleast_1d(scheme.hi)),
        mass_p=mass_p,
        mass_q=mass_q,
        infinite=infinite,
    )


def _resolve_scheme(p, q, scheme) -> QuadratureScheme:
    return scheme if scheme is not None else QuadratureScheme.for_pair(p, q)


def l1_distance(p, q, scheme: QuadratureScheme | None = None) -> float:
    """Integral of |p - q|; lies in [0, 2] for probability densities."""
    return _evaluate("l1", p, q, _resolve_scheme(p, q, scheme)).value


def hellinger(p, q, scheme: QuadratureScheme | None = None) -> float:
    """[integral of (sqrt p - sqrt q)^2]^(1/2); lies in [0, sqrt 2]."""
    rep = _evaluate("hellinger_sq", p, q, _resolve_scheme(p, q, scheme))
    return math.sqrt(max(rep.value, 0.0))


def kl_div(p, q, scheme: QuadratureScheme | None = None) -> float:
    """integral of p log(p/q); +inf when q vanishes where p is material."""
    return _evaluate("kl", p, q, _resolve_scheme(p, q, scheme)).value


def kl_second(p, q, scheme: QuadratureScheme | None = None) -> float:
    """integral of p log^2(p/q); +inf under the same condition as kl_div."""
    return _evaluate("kl2", p, q, _resolve_scheme(p, q, scheme)).value


def kl_ball_contains(p0, q, eps: float, scheme: QuadratureScheme | None = None) -> bool:
    """True iff K(p0, q) <= eps^2 and V(p0, q) <= eps^2 (estimates)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    scheme = _resolve_scheme(p0, q, scheme)
    k = kl_div(p0, q, scheme)
    if not k <= eps**2:
        return False
    v = kl_second(p0, q, scheme)
    return bool(v <= eps**2)


def metric_report(kind: str, p, q, scheme: QuadratureScheme | None = None) -> MetricReport:
    """Full provenance report; kind in {'l1', 'hellinger_sq', 'kl', 'kl2'}."""
    return _evaluate(kind, p, q, _resolve_scheme(p, q, scheme))


def sup_ratio(p, q, scheme: QuadratureScheme | None = None) -> float:
    """Estimate of sup |p/q| over quadrature nodes where p > 1e-12.

    Only an estimate (max over nodes); adequate for log-factor bounds.
    """
    scheme = _resolve_scheme(p, q, scheme)
    pts, _ = scheme.nodes()
    pv = np.asarray(p.pdf(pts), dtype=float)
    qv = np.asarray(q.pdf(pts), dtype=float)
    mask = pv > 1e-12
    if not np.any(mask):
        return 1.0
    if np.any(qv[mask] <= 0.0):
        return math.inf
    return float(np.max(pv[mask] / qv[mask]))
